//! Raw failure-log parsing.
//!
//! A log starts with an exception header (`pkg.SomeException: message`)
//! followed by `at ...` frame lines. Parsing stops at the first `Caused by:`
//! section unless caused-by chains are explicitly requested.

use std::fmt;

use thiserror::Error;

use crate::model::{FailureRecord, FrameError, StackFrame, TestId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no exception header found: {0}")]
    MalformedLog(String),
}

/// A frame line that could not be parsed; skipped, not fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number in the input.
    pub line_no: usize,
    pub error: FrameError,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line_no, self.error)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Keep appending frames from `Caused by:` sections.
    pub follow_caused_by: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFailure {
    pub record: FailureRecord,
    /// Header token as written, e.g. `java.net.UnknownHostException`.
    pub qualified_exception: String,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn parse_failure_text(raw: &str, test: TestId) -> Result<ParsedFailure, ParseError> {
    parse_failure_text_with(raw, test, ParseOptions::default())
}

pub fn parse_failure_text_with(
    raw: &str,
    test: TestId,
    options: ParseOptions,
) -> Result<ParsedFailure, ParseError> {
    let mut lines = raw
        .lines()
        .enumerate()
        .skip_while(|(_, l)| l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| ParseError::MalformedLog("input is empty".to_string()))?;
    let (qualified, message) = split_header(header.trim())?;

    let mut frames = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, line) in lines {
        let trimmed = line.trim();
        if trimmed.starts_with("Caused by:") {
            if options.follow_caused_by {
                continue;
            }
            break;
        }
        if trimmed.starts_with("at ") {
            match StackFrame::parse(trimmed) {
                Ok(frame) => frames.push(frame),
                Err(error) => diagnostics.push(Diagnostic {
                    line_no: idx + 1,
                    error,
                }),
            }
        }
    }

    let simple = simple_exception_name(qualified).to_string();
    Ok(ParsedFailure {
        record: FailureRecord::new(test, simple, message).with_frames(frames),
        qualified_exception: qualified.to_string(),
        diagnostics,
    })
}

/// Renders a record back into log text that [`parse_failure_text`] accepts.
pub fn render_failure_text(rec: &FailureRecord) -> String {
    let mut out = rec.exception_type.clone();
    if !rec.message.is_empty() {
        out.push_str(": ");
        out.push_str(&rec.message);
    }
    out.push('\n');
    for frame in &rec.frames {
        out.push_str("\tat ");
        out.push_str(&frame.raw);
        out.push('\n');
    }
    out
}

/// Last dot-segment of an exception name.
pub fn simple_exception_name(qualified: &str) -> &str {
    qualified.rsplit('.').next().unwrap_or(qualified)
}

fn split_header(header: &str) -> Result<(&str, &str), ParseError> {
    let (token, message) = match header.split_once(':') {
        Some((token, rest)) => (token, rest.strip_prefix(' ').unwrap_or(rest)),
        None => (header, ""),
    };
    let valid = !token.is_empty()
        && !token.starts_with('.')
        && !token.ends_with('.')
        && token
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '.' | '_' | '$'))
        && token.split('.').all(|seg| !seg.is_empty());
    if !valid || header.starts_with("at ") {
        return Err(ParseError::MalformedLog(format!(
            "first line is not an exception header: {header:?}"
        )));
    }
    Ok((token, message))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const JOURNAL_FAILURE: &str = "java.net.UnknownHostException: ip-172-31-48-81: ip-172-31-48-81: Temporary failure in name resolution
\tat java.net.Inet6AddressImpl.lookupAllHostAddr(Native Method)
\tat java.net.InetAddress$2.lookupAllHostAddr(InetAddress.java:929)
\tat java.net.InetAddress.getAddressesFromNameService(InetAddress.java:1324)
\tat java.net.InetAddress.getLocalHost(InetAddress.java:1501)
\tat tachyon.LocalTachyonCluster.start(LocalTachyonCluster.java:104)
\tat tachyon.JournalTest.before(JournalTest.java:33)
";

    fn test_id() -> TestId {
        TestId::new("alluxio", "tachyon.JournalTest", "TableTest")
    }

    #[test]
    fn parses_journal_failure() {
        let parsed = parse_failure_text(JOURNAL_FAILURE, test_id()).unwrap();
        let rec = &parsed.record;
        assert_eq!(rec.exception_type, "UnknownHostException");
        assert_eq!(parsed.qualified_exception, "java.net.UnknownHostException");
        assert!(rec.message.starts_with("ip-172-31-48-81"));
        assert_eq!(
            rec.message,
            "ip-172-31-48-81: ip-172-31-48-81: Temporary failure in name resolution"
        );
        assert_eq!(rec.frames.len(), 6);
        assert_eq!(rec.frames[0].file, None);
        assert_eq!(
            rec.frames[5].raw,
            "tachyon.JournalTest.before(JournalTest.java:33)"
        );
        assert!(parsed.diagnostics.is_empty());
        assert_eq!(rec.label, None);
    }

    #[test]
    fn render_then_parse() {
        let parsed = parse_failure_text(JOURNAL_FAILURE, test_id()).unwrap();
        let again = parse_failure_text(&render_failure_text(&parsed.record), test_id()).unwrap();
        assert_eq!(again.record, parsed.record);
    }

    #[test]
    fn bare_exception() {
        let parsed = parse_failure_text("java.lang.AssertionError", test_id()).unwrap();
        assert_eq!(parsed.record.exception_type, "AssertionError");
        assert_eq!(parsed.record.message, "");
        assert!(parsed.record.frames.is_empty());
    }

    #[test]
    fn single_frame() {
        let parsed = parse_failure_text(
            "java.lang.AssertionError: boom\nat a.B.c(B.java:7)",
            test_id(),
        )
        .unwrap();
        let f = &parsed.record.frames[0];
        assert_eq!((f.class_fqn.as_str(), f.method.as_str()), ("a.B", "c"));
        assert_eq!((f.file.as_deref(), f.line), (Some("B.java"), Some(7)));
    }

    #[test]
    fn unqualified_exception_kept_as_is() {
        let parsed = parse_failure_text("MyError: x", test_id()).unwrap();
        assert_eq!(parsed.record.exception_type, "MyError");
        assert_eq!(parsed.qualified_exception, "MyError");
    }

    #[test]
    fn malformed_header_is_fatal() {
        for bad in [
            "",
            "   \n  ",
            "at a.B.c(B.java:1)",
            "Tests run: 3, Failures: 1",
            ": nothing",
        ] {
            assert!(
                matches!(
                    parse_failure_text(bad, test_id()),
                    Err(ParseError::MalformedLog(_))
                ),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn malformed_frame_is_skipped_with_diagnostic() {
        let log = "java.io.IOException: x\n\tat a.B.c(B.java:1)\n\tat garbage here\n\tat a.B.d(B.java:2)\n";
        let parsed = parse_failure_text(log, test_id()).unwrap();
        assert_eq!(parsed.record.frames.len(), 2);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].line_no, 3);
    }

    #[test]
    fn caused_by_terminates_primary_trace() {
        let log = "java.lang.RuntimeException: outer
\tat a.B.c(B.java:1)
\t... 3 more
Caused by: java.io.IOException: inner
\tat a.D.e(D.java:9)
";
        let parsed = parse_failure_text(log, test_id()).unwrap();
        assert_eq!(parsed.record.frames.len(), 1);
        assert_eq!(parsed.record.exception_type, "RuntimeException");

        let chained = parse_failure_text_with(
            log,
            test_id(),
            ParseOptions {
                follow_caused_by: true,
            },
        )
        .unwrap();
        assert_eq!(chained.record.frames.len(), 2);
    }

    #[test]
    fn non_frame_lines_ignored() {
        let log = "java.lang.AssertionError: expected\nsecond line of message\n\tat a.B.c(B.java:1)\n\t... 12 more\n";
        let parsed = parse_failure_text(log, test_id()).unwrap();
        assert_eq!(parsed.record.message, "expected");
        assert_eq!(parsed.record.frames.len(), 1);
        assert!(parsed.diagnostics.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frames_keep_log_order(methods in proptest::collection::vec("[a-z]{1,6}", 0..20)) {
                let mut log = String::from("java.lang.IllegalStateException: m\n");
                for (i, m) in methods.iter().enumerate() {
                    log.push_str(&format!("\tat pkg.C{i}.{m}(C{i}.java:{i})\n"));
                }
                let parsed = parse_failure_text(&log, test_id()).unwrap();
                let got: Vec<_> = parsed.record.frames.iter().map(|f| f.method.clone()).collect();
                prop_assert_eq!(got, methods);
            }
        }
    }
}
