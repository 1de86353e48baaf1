//! Reading and writing corpora in the failure XML format:
//!
//! ```xml
//! <Corpus>
//!   <Failure label="flaky">
//!     <T project="alluxio">tachyon.JournalTest.TableTest</T>
//!     <E>UnknownHostException</E>
//!     <M>ip-172-31-48-81: Temporary failure in name resolution</M>
//!     <S><line>tachyon.JournalTest.before(JournalTest.java:33)</line></S>
//!   </Failure>
//! </Corpus>
//! ```
//!
//! A missing `label` attribute means flaky. Failures may also appear at the
//! top level without a `Corpus` root, or grouped under `<Project name="..">`.

use std::io::{BufRead, Write};

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::model::{Corpus, FailureRecord, Label, ModelError, StackFrame, TestId};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("xml syntax error at byte {position}: {message}")]
    Xml { position: u64, message: String },
    #[error("schema error in {element}: {reason}")]
    Schema { element: String, reason: String },
    #[error("{element}: project {found:?} conflicts with enclosing project {grouping:?}")]
    DuplicateProjectMismatch {
        element: String,
        grouping: String,
        found: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    fn schema(element: impl Into<String>, reason: impl Into<String>) -> Self {
        CorpusError::Schema {
            element: element.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Default)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
    text: String,
}

impl Element {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn start_element<R>(reader: &Reader<R>, start: &BytesStart<'_>) -> Result<Element, CorpusError> {
    let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| CorpusError::Xml {
            position: reader.buffer_position(),
            message: e.to_string(),
        })?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|e| CorpusError::Xml {
                position: reader.buffer_position(),
                message: e.to_string(),
            })?
            .into_owned();
        attrs.push((key, value));
    }
    Ok(Element {
        name,
        attrs,
        ..Element::default()
    })
}

/// Parses the whole document into a synthetic root element.
fn read_tree<R: BufRead>(doc: R) -> Result<Element, CorpusError> {
    let mut reader = Reader::from_reader(doc);
    reader.config_mut().trim_text(false);
    let mut stack = vec![Element {
        name: "#document".to_string(),
        ..Element::default()
    }];
    let mut buf = Vec::new();
    loop {
        let xml_err = |reader: &Reader<R>, e: quick_xml::Error| CorpusError::Xml {
            position: reader.buffer_position(),
            message: e.to_string(),
        };
        match reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(&reader, e))?
        {
            Event::Start(start) => {
                let el = start_element(&reader, &start)?;
                stack.push(el);
            }
            Event::Empty(start) => {
                let el = start_element(&reader, &start)?;
                stack.last_mut().expect("root").children.push(el);
            }
            Event::End(_) => {
                let el = stack.pop().expect("balanced");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => {
                        return Err(CorpusError::Xml {
                            position: reader.buffer_position(),
                            message: "unbalanced end tag".into(),
                        })
                    }
                }
            }
            Event::Text(text) => {
                let text = text.unescape().map_err(|e| xml_err(&reader, e))?;
                stack.last_mut().expect("root").text.push_str(&text);
            }
            Event::CData(data) => {
                let data = String::from_utf8_lossy(&data.into_inner()).into_owned();
                stack.last_mut().expect("root").text.push_str(&data);
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if stack.len() != 1 {
        let open = stack.last().map(|e| e.name.clone()).unwrap_or_default();
        return Err(CorpusError::Xml {
            position: reader.buffer_position(),
            message: format!("unclosed element <{open}>"),
        });
    }
    Ok(stack.pop().expect("root"))
}

/// Reads a corpus; one record per `Failure` element, document order kept
/// within each test bucket.
pub fn read_corpus_xml<R: BufRead>(doc: R) -> Result<Corpus, CorpusError> {
    let root = read_tree(doc)?;
    let mut corpus = Corpus::new();
    let mut counter = 0usize;
    for child in &root.children {
        match child.name.as_str() {
            "Corpus" => {
                for el in &child.children {
                    match el.name.as_str() {
                        "Failure" => add_failure(&mut corpus, el, None, &mut counter)?,
                        "Project" => read_project(&mut corpus, el, &mut counter)?,
                        other => {
                            return Err(CorpusError::schema(
                                other,
                                "unexpected element inside Corpus",
                            ))
                        }
                    }
                }
            }
            "Failure" => add_failure(&mut corpus, child, None, &mut counter)?,
            "Project" => read_project(&mut corpus, child, &mut counter)?,
            other => return Err(CorpusError::schema(other, "unexpected root element")),
        }
    }
    Ok(corpus)
}

pub fn read_corpus_str(doc: &str) -> Result<Corpus, CorpusError> {
    read_corpus_xml(doc.as_bytes())
}

fn read_project(corpus: &mut Corpus, el: &Element, counter: &mut usize) -> Result<(), CorpusError> {
    let name = el
        .attr("name")
        .ok_or_else(|| CorpusError::schema("Project", "missing name attribute"))?;
    for child in &el.children {
        match child.name.as_str() {
            "Failure" => add_failure(corpus, child, Some(name), counter)?,
            other => {
                return Err(CorpusError::schema(
                    other,
                    "unexpected element inside Project",
                ))
            }
        }
    }
    Ok(())
}

fn add_failure(
    corpus: &mut Corpus,
    el: &Element,
    grouping: Option<&str>,
    counter: &mut usize,
) -> Result<(), CorpusError> {
    *counter += 1;
    let here = format!("Failure #{counter}");
    let label = match el.attr("label") {
        None => Label::Flaky,
        Some(value) => value
            .parse::<Label>()
            .map_err(|e| CorpusError::schema(format!("{here} label attribute"), e.to_string()))?,
    };

    let mut test = None;
    let mut exception = None;
    let mut message = None;
    let mut frames = None;
    for child in &el.children {
        let slot_taken =
            |name: &str| CorpusError::schema(format!("{here} > {name}"), "duplicate element");
        match child.name.as_str() {
            "T" => {
                if test.is_some() {
                    return Err(slot_taken("T"));
                }
                let project = child.attr("project").ok_or_else(|| {
                    CorpusError::schema(format!("{here} > T"), "missing project attribute")
                })?;
                if project.is_empty() {
                    return Err(CorpusError::schema(
                        format!("{here} > T"),
                        "empty project attribute",
                    ));
                }
                if let Some(group) = grouping {
                    if group != project {
                        return Err(CorpusError::DuplicateProjectMismatch {
                            element: format!("{here} > T"),
                            grouping: group.to_string(),
                            found: project.to_string(),
                        });
                    }
                }
                let id = TestId::from_full_name(project, &child.text)
                    .map_err(|e| CorpusError::schema(format!("{here} > T"), e.to_string()))?;
                test = Some(id);
            }
            "E" => {
                if exception.is_some() {
                    return Err(slot_taken("E"));
                }
                let e = child.text.trim();
                if e.is_empty() {
                    return Err(CorpusError::schema(
                        format!("{here} > E"),
                        "empty exception type",
                    ));
                }
                exception = Some(e.to_string());
            }
            "M" => {
                if message.is_some() {
                    return Err(slot_taken("M"));
                }
                message = Some(child.text.clone());
            }
            "S" => {
                if frames.is_some() {
                    return Err(slot_taken("S"));
                }
                let mut parsed = Vec::with_capacity(child.children.len());
                for (i, line) in child.children.iter().enumerate() {
                    let at = format!("{here} > S > line #{}", i + 1);
                    if line.name != "line" {
                        return Err(CorpusError::schema(
                            format!("{here} > S > {}", line.name),
                            "expected line element",
                        ));
                    }
                    let frame = StackFrame::parse(&line.text)
                        .map_err(|e| CorpusError::schema(at, e.to_string()))?;
                    parsed.push(frame);
                }
                frames = Some(parsed);
            }
            other => {
                return Err(CorpusError::schema(
                    format!("{here} > {other}"),
                    "unexpected element",
                ))
            }
        }
    }

    let test = test.ok_or_else(|| CorpusError::schema(&here, "missing T element"))?;
    let exception = exception.ok_or_else(|| CorpusError::schema(&here, "missing E element"))?;
    let record = FailureRecord::new(test, exception, message.unwrap_or_default())
        .with_frames(frames.unwrap_or_default())
        .with_label(label);
    corpus
        .insert(record)
        .map_err(|e: ModelError| CorpusError::schema(&here, e.to_string()))?;
    Ok(())
}

/// Writes every record of the corpus, grouped by project and test, flaky
/// records before true ones.
pub fn write_corpus_xml<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(out, "<Corpus>")?;
    for (_, rec) in corpus.records() {
        write_failure(&mut out, rec)?;
    }
    writeln!(out, "</Corpus>")?;
    Ok(())
}

pub fn write_corpus_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus_xml(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("corpus text is UTF-8")
}

fn write_failure<W: Write>(out: &mut W, rec: &FailureRecord) -> std::io::Result<()> {
    let label = rec.label.unwrap_or(Label::Flaky);
    writeln!(out, r#"  <Failure label="{}">"#, label)?;
    writeln!(
        out,
        r#"    <T project="{}">{}</T>"#,
        escape(&rec.test.project),
        escape(rec.test.full_name())
    )?;
    writeln!(out, "    <E>{}</E>", escape(&rec.exception_type))?;
    writeln!(out, "    <M>{}</M>", escape(&rec.message))?;
    if rec.frames.is_empty() {
        writeln!(out, "    <S></S>")?;
    } else {
        writeln!(out, "    <S>")?;
        for frame in &rec.frames {
            writeln!(out, "      <line>{}</line>", escape(&frame.raw))?;
        }
        writeln!(out, "    </S>")?;
    }
    writeln!(out, "  </Failure>")
}

#[cfg(test)]
mod tests {
    use super::*;

    // Two flaky failures as published, including the missing parenthesis on
    // the first failure's last line and the elision marker between them.
    const JOURNAL: &str = include_str!("../tests/data/journal_pair.xml");

    #[test]
    fn reads_journal() {
        let corpus = read_corpus_str(JOURNAL).unwrap();
        assert_eq!(corpus.project_names().collect::<Vec<_>>(), ["alluxio"]);
        assert_eq!(corpus.project("alluxio").unwrap().len(), 1);
        let test = TestId::new("alluxio", "tachyon.JournalTest", "TableTest");
        let failures = corpus.test(&test).unwrap();
        assert_eq!(failures.flaky.len(), 2);
        assert!(failures.true_failures.is_empty());
        assert_eq!(failures.flaky[0].frames.len(), 6);
        assert!(failures.flaky[1].message.starts_with("ip-172-31-58-81"));
    }

    #[test]
    fn empty_documents() {
        assert!(read_corpus_str("").unwrap().is_empty());
        assert!(read_corpus_str("<Corpus/>").unwrap().is_empty());
        assert!(
            read_corpus_str("<?xml version=\"1.0\"?>\n<Corpus>\n</Corpus>")
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn default_label_is_flaky() {
        let doc = r#"<Corpus>
  <Failure label="true"><T project="p">a.T.m</T><E>E</E><M>x</M><S><line>a.B.c(B.java:1)</line></S></Failure>
  <Failure><T project="p">a.T.m</T><E>E</E><M>y</M><S/></Failure>
</Corpus>"#;
        let corpus = read_corpus_str(doc).unwrap();
        let t = corpus.test(&TestId::new("p", "a.T", "m")).unwrap();
        assert_eq!(t.true_failures.len(), 1);
        assert_eq!(t.flaky.len(), 1);
        assert_eq!(t.true_failures[0].message, "x");
    }

    #[test]
    fn schema_errors_name_the_element() {
        let cases = [
            (
                r#"<Corpus><Failure><E>E</E></Failure></Corpus>"#,
                "Failure #1",
            ),
            (
                r#"<Corpus><Failure><T>a.T.m</T><E>E</E></Failure></Corpus>"#,
                "Failure #1 > T",
            ),
            (
                r#"<Corpus><Failure label="maybe"><T project="p">a.T.m</T><E>E</E></Failure></Corpus>"#,
                "label",
            ),
            (
                r#"<Corpus><Failure><T project="p">a.T.m</T><E>E</E><S><line>nonsense</line></S></Failure></Corpus>"#,
                "line #1",
            ),
            (
                r#"<Corpus><Failure><T project="p">a.T.m</T><E></E></Failure></Corpus>"#,
                "Failure #1 > E",
            ),
            (r#"<Corpus><Bogus/></Corpus>"#, "Bogus"),
            (
                r#"<Corpus><Failure><T project="p">a.T.m</T><E>E</E><X/></Failure></Corpus>"#,
                "Failure #1 > X",
            ),
        ];
        for (doc, element) in cases {
            match read_corpus_str(doc) {
                Err(CorpusError::Schema { element: got, .. }) => {
                    assert!(got.contains(element), "{got} vs {element}")
                }
                other => panic!("expected schema error for {doc}, got {other:?}"),
            }
        }
    }

    #[test]
    fn project_grouping_mismatch() {
        let doc = r#"<Corpus><Project name="a"><Failure><T project="b">x.T.m</T><E>E</E></Failure></Project></Corpus>"#;
        assert!(matches!(
            read_corpus_str(doc),
            Err(CorpusError::DuplicateProjectMismatch { .. })
        ));
        let ok = r#"<Corpus><Project name="a"><Failure><T project="a">x.T.m</T><E>E</E></Failure></Project></Corpus>"#;
        assert_eq!(read_corpus_str(ok).unwrap().len(), 1);
    }

    #[test]
    fn malformed_xml() {
        assert!(matches!(
            read_corpus_str("<Corpus><Failure>"),
            Err(CorpusError::Xml { .. })
        ));
    }

    #[test]
    fn write_empty_corpus() {
        let text = write_corpus_string(&Corpus::new());
        assert!(!text.contains("<Failure"));
        assert!(read_corpus_str(&text).unwrap().is_empty());
    }

    #[test]
    fn round_trips_journal_and_labels() {
        let mut corpus = read_corpus_str(JOURNAL).unwrap();
        let text = write_corpus_string(&corpus);
        assert_eq!(read_corpus_str(&text).unwrap(), corpus);

        let t = TestId::new("p", "a.T", "m");
        corpus
            .insert(FailureRecord::new(t, "E", "<escaped> & \"quoted\"").with_label(Label::True))
            .unwrap();
        let text = write_corpus_string(&corpus);
        assert!(text.contains(r#"<Failure label="true">"#));
        assert_eq!(read_corpus_str(&text).unwrap(), corpus);
    }
}
