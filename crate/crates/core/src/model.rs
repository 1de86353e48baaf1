//! Core domain types: stack frames, test identities, failure records and the
//! labeled corpus they are collected into.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One call-site line of a stack trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StackFrame {
    pub class_fqn: String,
    pub method: String,
    /// Source file, absent for native or unknown-source frames.
    pub file: Option<String>,
    pub line: Option<u32>,
    /// Original frame text without the leading `at `.
    pub raw: String,
}

/// Location part of a frame, the text between the parentheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location<'a> {
    Native,
    Unknown,
    File(&'a str, Option<u32>),
}

impl StackFrame {
    /// Parses `CLASS.METHOD(LOCATION)` where location is `FILE:LINE`, `FILE`,
    /// `Native Method` or `Unknown Source`. A leading `at ` is accepted, and a
    /// missing closing parenthesis is tolerated.
    pub fn parse(text: &str) -> Result<StackFrame, FrameError> {
        let trimmed = text.trim();
        let body = trimmed
            .strip_prefix("at ")
            .map(str::trim_start)
            .unwrap_or(trimmed);
        let open = body
            .find('(')
            .ok_or_else(|| FrameError::new(body, "missing '('"))?;
        let qualified = &body[..open];
        let inner = &body[open + 1..];
        let inner = match inner.strip_suffix(')') {
            Some(inner) => inner,
            None if !inner.contains(')') => inner,
            None => return Err(FrameError::new(body, "trailing text after ')'")),
        };
        if qualified.chars().any(char::is_whitespace) {
            return Err(FrameError::new(body, "whitespace in qualified method"));
        }
        let dot = qualified
            .rfind('.')
            .ok_or_else(|| FrameError::new(body, "method is not class-qualified"))?;
        let (class_fqn, method) = (&qualified[..dot], &qualified[dot + 1..]);
        if class_fqn.is_empty() || method.is_empty() {
            return Err(FrameError::new(body, "empty class or method"));
        }
        let (file, line) = match parse_location(inner).map_err(|msg| FrameError::new(body, msg))? {
            Location::Native | Location::Unknown => (None, None),
            Location::File(file, line) => (Some(file.to_string()), line),
        };
        Ok(StackFrame {
            class_fqn: class_fqn.to_string(),
            method: method.to_string(),
            file,
            line,
            raw: body.to_string(),
        })
    }

    /// `class.method`, the part compared against test names.
    pub fn qualified_method(&self) -> String {
        format!("{}.{}", self.class_fqn, self.method)
    }

    /// Canonical `class.method(file:line)` rendering.
    pub fn render(&self) -> String {
        self.render_with(true)
    }

    pub fn render_with(&self, line_numbers: bool) -> String {
        let location = match (&self.file, self.line) {
            (Some(file), Some(line)) if line_numbers => format!("{file}:{line}"),
            (Some(file), _) => file.clone(),
            (None, _) if self.raw.contains("(Native Method") => "Native Method".to_string(),
            (None, _) => "Unknown Source".to_string(),
        };
        format!("{}.{}({})", self.class_fqn, self.method, location)
    }

    /// Simple (last segment) class name.
    pub fn simple_class(&self) -> &str {
        self.class_fqn.rsplit('.').next().unwrap_or(&self.class_fqn)
    }
}

fn parse_location(inner: &str) -> Result<Location<'_>, &'static str> {
    match inner {
        "Native Method" => return Ok(Location::Native),
        "Unknown Source" => return Ok(Location::Unknown),
        "" => return Err("empty location"),
        _ => {}
    }
    match inner.rsplit_once(':') {
        Some((file, line)) => {
            let line = line
                .parse::<u32>()
                .map_err(|_| "line number is not a nonnegative integer")?;
            if file.is_empty() {
                return Err("empty file name");
            }
            Ok(Location::File(file, Some(line)))
        }
        None if inner.chars().any(char::is_whitespace) => Err("unrecognized location"),
        None => Ok(Location::File(inner, None)),
    }
}

impl fmt::Display for StackFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed frame {text:?}: {reason}")]
pub struct FrameError {
    pub text: String,
    pub reason: &'static str,
}

impl FrameError {
    fn new(text: &str, reason: &'static str) -> Self {
        FrameError {
            text: text.to_string(),
            reason,
        }
    }
}

/// Identity of a test method within a project.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TestId {
    pub project: String,
    pub class_fqn: String,
    pub method: String,
}

impl TestId {
    pub fn new(
        project: impl Into<String>,
        class_fqn: impl Into<String>,
        method: impl Into<String>,
    ) -> Self {
        TestId {
            project: project.into(),
            class_fqn: class_fqn.into(),
            method: method.into(),
        }
    }

    /// Splits `pkg.Class.method` at the last dot.
    pub fn from_full_name(project: &str, full_name: &str) -> Result<TestId, ModelError> {
        let full_name = full_name.trim();
        match full_name.rsplit_once('.') {
            Some((class, method))
                if !class.is_empty()
                    && !method.is_empty()
                    && !full_name.contains(char::is_whitespace) =>
            {
                Ok(TestId::new(project, class, method))
            }
            _ => Err(ModelError::BadTestName(full_name.to_string())),
        }
    }

    pub fn full_name(&self) -> String {
        full_test_name(self)
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}.{}", self.project, self.class_fqn, self.method)
    }
}

pub fn full_test_name(t: &TestId) -> String {
    format!("{}.{}", t.class_fqn, t.method)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Flaky,
    /// A real, non-flaky failure.
    True,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Flaky, Label::True];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Flaky => "flaky",
            Label::True => "true",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flaky" => Ok(Label::Flaky),
            "true" => Ok(Label::True),
            other => Err(ModelError::BadLabel(other.to_string())),
        }
    }
}

/// One observed failure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FailureRecord {
    pub test: TestId,
    pub exception_type: String,
    pub message: String,
    /// Topmost (most recent call) first.
    pub frames: Vec<StackFrame>,
    /// `None` for unlabeled failures.
    pub label: Option<Label>,
}

impl FailureRecord {
    pub fn new(
        test: TestId,
        exception_type: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        FailureRecord {
            test,
            exception_type: exception_type.into(),
            message: message.into(),
            frames: Vec::new(),
            label: None,
        }
    }

    pub fn with_frames(mut self, frames: Vec<StackFrame>) -> Self {
        self.frames = frames;
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("record for {0} has no label")]
    Unlabeled(TestId),
    #[error("record has an empty exception type")]
    EmptyException,
    #[error("invalid test name {0:?}; expected package.Class.method")]
    BadTestName(String),
    #[error("invalid label {0:?}; expected \"flaky\" or \"true\"")]
    BadLabel(String),
}

/// Flaky and true failures recorded for one test.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TestFailures {
    pub flaky: Vec<FailureRecord>,
    pub true_failures: Vec<FailureRecord>,
}

impl TestFailures {
    pub fn bucket(&self, label: Label) -> &[FailureRecord] {
        match label {
            Label::Flaky => &self.flaky,
            Label::True => &self.true_failures,
        }
    }

    pub fn len(&self) -> usize {
        self.flaky.len() + self.true_failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flaky records first, then true ones.
    pub fn iter(&self) -> impl Iterator<Item = &FailureRecord> {
        self.flaky.iter().chain(self.true_failures.iter())
    }
}

/// Position of a record inside a [`Corpus`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordId {
    pub test: TestId,
    pub label: Label,
    pub index: usize,
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}[{}]", self.test, self.label, self.index)
    }
}

/// Labeled failures grouped by project, then by test.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    projects: BTreeMap<String, BTreeMap<TestId, TestFailures>>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a labeled record to the bucket of its test. Duplicates are kept.
    pub fn insert(&mut self, record: FailureRecord) -> Result<RecordId, ModelError> {
        let label = record
            .label
            .ok_or_else(|| ModelError::Unlabeled(record.test.clone()))?;
        if record.exception_type.is_empty() {
            return Err(ModelError::EmptyException);
        }
        let test = record.test.clone();
        let failures = self
            .projects
            .entry(test.project.clone())
            .or_default()
            .entry(test.clone())
            .or_default();
        let bucket = match label {
            Label::Flaky => &mut failures.flaky,
            Label::True => &mut failures.true_failures,
        };
        bucket.push(record);
        Ok(RecordId {
            test,
            label,
            index: bucket.len() - 1,
        })
    }

    pub fn from_records(
        records: impl IntoIterator<Item = FailureRecord>,
    ) -> Result<Corpus, ModelError> {
        let mut corpus = Corpus::new();
        for rec in records {
            corpus.insert(rec)?;
        }
        Ok(corpus)
    }

    pub fn is_empty(&self) -> bool {
        self.projects.is_empty()
    }

    pub fn project_names(&self) -> impl Iterator<Item = &str> {
        self.projects.keys().map(String::as_str)
    }

    pub fn project(&self, name: &str) -> Option<&BTreeMap<TestId, TestFailures>> {
        self.projects.get(name)
    }

    pub fn projects(&self) -> impl Iterator<Item = (&str, &BTreeMap<TestId, TestFailures>)> {
        self.projects.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn test(&self, id: &TestId) -> Option<&TestFailures> {
        self.projects.get(&id.project)?.get(id)
    }

    pub fn get(&self, id: &RecordId) -> Option<&FailureRecord> {
        self.test(&id.test)?.bucket(id.label).get(id.index)
    }

    /// Every record with its id, in project, test, label, index order.
    pub fn records(&self) -> impl Iterator<Item = (RecordId, &FailureRecord)> {
        self.projects.values().flat_map(|tests| {
            tests.iter().flat_map(|(test, failures)| {
                Label::ALL.into_iter().flat_map(move |label| {
                    failures
                        .bucket(label)
                        .iter()
                        .enumerate()
                        .map(move |(index, rec)| {
                            (
                                RecordId {
                                    test: test.clone(),
                                    label,
                                    index,
                                },
                                rec,
                            )
                        })
                })
            })
        })
    }

    /// Records of one project, same order as [`Corpus::records`].
    pub fn project_records<'a>(
        &'a self,
        project: &str,
    ) -> impl Iterator<Item = (RecordId, &'a FailureRecord)> + 'a {
        self.projects.get(project).into_iter().flat_map(|tests| {
            tests.iter().flat_map(|(test, failures)| {
                Label::ALL.into_iter().flat_map(move |label| {
                    failures
                        .bucket(label)
                        .iter()
                        .enumerate()
                        .map(move |(index, rec)| {
                            (
                                RecordId {
                                    test: test.clone(),
                                    label,
                                    index,
                                },
                                rec,
                            )
                        })
                })
            })
        })
    }

    pub fn len(&self) -> usize {
        self.projects
            .values()
            .flat_map(|t| t.values())
            .map(TestFailures::len)
            .sum()
    }

    pub fn count(&self, label: Label) -> usize {
        self.projects
            .values()
            .flat_map(|t| t.values())
            .map(|f| f.bucket(label).len())
            .sum()
    }

    /// Sub-corpus holding only one project.
    pub fn only_project(&self, name: &str) -> Corpus {
        let mut projects = BTreeMap::new();
        if let Some(tests) = self.projects.get(name) {
            projects.insert(name.to_string(), tests.clone());
        }
        Corpus { projects }
    }
}

/// Set of tests known in a project, used for test-name prefix checks.
#[derive(Debug, Clone, Default)]
pub struct TestUniverse {
    tests: Vec<(String, TestId)>,
}

impl TestUniverse {
    pub fn new<'a>(tests: impl IntoIterator<Item = &'a TestId>) -> Self {
        let mut tests: Vec<(String, TestId)> = tests
            .into_iter()
            .map(|t| (t.full_name(), t.clone()))
            .collect();
        tests.sort();
        tests.dedup();
        TestUniverse { tests }
    }

    /// All tests of one project of the corpus.
    pub fn of_project(corpus: &Corpus, project: &str) -> Self {
        Self::new(
            corpus
                .project(project)
                .into_iter()
                .flat_map(|tests| tests.keys()),
        )
    }

    pub fn with(mut self, test: &TestId) -> Self {
        let entry = (test.full_name(), test.clone());
        if let Err(pos) = self.tests.binary_search(&entry) {
            self.tests.insert(pos, entry);
        }
        self
    }

    pub fn tests(&self) -> impl Iterator<Item = &TestId> {
        self.tests.iter().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    /// True when `text` starts with the full name of a known test other than `except`.
    pub fn any_prefix_of(&self, text: &str, except: Option<&TestId>) -> bool {
        self.tests
            .iter()
            .any(|(name, test)| Some(test) != except && text.starts_with(name.as_str()))
    }

    pub fn is_test_class(&self, class_fqn: &str) -> bool {
        self.tests.iter().any(|(_, t)| t.class_fqn == class_fqn)
    }
}
