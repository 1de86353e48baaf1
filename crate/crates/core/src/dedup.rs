//! Text-based failure de-duplication.
//!
//! Two failures match when their exception types and normalized frame lists
//! are equal. The message is never part of the key. Matching can be limited
//! to failures of the same test, or run across all tests of a project with
//! test-pointing frames removed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Corpus, Label, RecordId, TestId, TestUniverse};
use crate::normalize::{normalize_with, NoiseFilter, NormalizedFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Exception type plus normalized frames.
    Full,
    ExceptionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchScope {
    PerTest,
    /// Across tests of one project; test-referencing frames are dropped.
    CrossTest,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Full => "full",
            MatchMode::ExceptionOnly => "exception_only",
        }
    }
}

impl MatchScope {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchScope::PerTest => "per_test",
            MatchScope::CrossTest => "cross_test",
        }
    }
}

/// Knobs shared by everything that normalizes and keys failures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchConfig {
    pub noise: NoiseFilter,
    /// Drop `:LINE` from frame keys. Off by default.
    pub strip_line_numbers: bool,
}

impl MatchConfig {
    pub fn normalize(&self, rec: &crate::model::FailureRecord) -> NormalizedFailure {
        normalize_with(rec, &self.noise)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FailureSignature {
    pub exception_type: String,
    pub frame_keys: Vec<String>,
    pub mode: MatchMode,
    pub scope: MatchScope,
}

impl fmt::Display for FailureSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.exception_type)?;
        for key in &self.frame_keys {
            write!(f, " | {key}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("cannot compare signatures built with different settings: {left_mode}/{left_scope} vs {right_mode}/{right_scope}")]
    ModeMismatch {
        left_mode: &'static str,
        left_scope: &'static str,
        right_mode: &'static str,
        right_scope: &'static str,
    },
}

pub fn signature(
    nf: &NormalizedFailure,
    mode: MatchMode,
    scope: MatchScope,
    known_tests: &TestUniverse,
) -> FailureSignature {
    signature_with(nf, mode, scope, known_tests, &MatchConfig::default())
}

pub fn signature_with(
    nf: &NormalizedFailure,
    mode: MatchMode,
    scope: MatchScope,
    known_tests: &TestUniverse,
    config: &MatchConfig,
) -> FailureSignature {
    let frame_keys = match mode {
        MatchMode::ExceptionOnly => Vec::new(),
        MatchMode::Full => {
            let test = &nf.base.test;
            nf.kept_frames
                .iter()
                .filter(|frame| match scope {
                    MatchScope::PerTest => true,
                    MatchScope::CrossTest => {
                        frame.class_fqn != test.class_fqn
                            && !frame.qualified_method().starts_with(&test.full_name())
                            && !known_tests.any_prefix_of(&frame.qualified_method(), None)
                    }
                })
                .map(|frame| frame.render_with(!config.strip_line_numbers))
                .collect()
        }
    };
    FailureSignature {
        exception_type: nf.base.exception_type.clone(),
        frame_keys,
        mode,
        scope,
    }
}

pub fn matches(a: &FailureSignature, b: &FailureSignature) -> Result<bool, MatchError> {
    if a.mode != b.mode || a.scope != b.scope {
        return Err(MatchError::ModeMismatch {
            left_mode: a.mode.as_str(),
            left_scope: a.scope.as_str(),
            right_mode: b.mode.as_str(),
            right_scope: b.scope.as_str(),
        });
    }
    Ok(a.exception_type == b.exception_type && a.frame_keys == b.frame_keys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    MatchedFlakyOnly,
    MatchedTrue,
    MatchedBoth,
    MatchedNone,
}

impl Basis {
    pub fn from_counts(flaky: usize, true_failures: usize) -> Basis {
        match (flaky > 0, true_failures > 0) {
            (true, false) => Basis::MatchedFlakyOnly,
            (false, true) => Basis::MatchedTrue,
            (true, true) => Basis::MatchedBoth,
            (false, false) => Basis::MatchedNone,
        }
    }

    /// Only an exclusively-flaky match suppresses a failure as flaky.
    pub fn predicted(self) -> Label {
        match self {
            Basis::MatchedFlakyOnly => Label::Flaky,
            _ => Label::True,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Basis::MatchedFlakyOnly => "matched_flaky_only",
            Basis::MatchedTrue => "matched_true",
            Basis::MatchedBoth => "matched_both",
            Basis::MatchedNone => "matched_none",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageVerdict {
    pub predicted: Label,
    pub basis: Basis,
    pub evidence: Vec<RecordId>,
}

impl TriageVerdict {
    pub fn new(basis: Basis, evidence: Vec<RecordId>) -> Self {
        TriageVerdict {
            predicted: basis.predicted(),
            basis,
            evidence,
        }
    }

    pub fn from_matches(flaky: Vec<RecordId>, true_failures: Vec<RecordId>) -> Self {
        let basis = Basis::from_counts(flaky.len(), true_failures.len());
        let mut evidence = flaky;
        evidence.extend(true_failures);
        TriageVerdict::new(basis, evidence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Group {
    Test(TestId),
    Project(String),
}

impl Group {
    fn of(test: &TestId, scope: MatchScope) -> Group {
        match scope {
            MatchScope::PerTest => Group::Test(test.clone()),
            MatchScope::CrossTest => Group::Project(test.project.clone()),
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Matches {
    flaky: Vec<RecordId>,
    true_failures: Vec<RecordId>,
}

/// Signatures of a labeled history, grouped by scope for constant-time lookup.
#[derive(Debug, Clone)]
pub struct MatchIndex {
    mode: MatchMode,
    scope: MatchScope,
    config: MatchConfig,
    universes: BTreeMap<String, TestUniverse>,
    entries: HashMap<(Group, FailureSignature), Matches>,
}

impl MatchIndex {
    /// Indexes every record of `history`. `extra_tests` are added to each
    /// project's test universe (e.g. the test of a query not seen before).
    pub fn build(
        history: &Corpus,
        mode: MatchMode,
        scope: MatchScope,
        config: &MatchConfig,
        extra_tests: &[TestId],
    ) -> MatchIndex {
        let mut universes: BTreeMap<String, TestUniverse> = history
            .project_names()
            .map(|p| (p.to_string(), TestUniverse::of_project(history, p)))
            .collect();
        for test in extra_tests {
            let u = universes.remove(&test.project).unwrap_or_default();
            universes.insert(test.project.clone(), u.with(test));
        }
        let mut index = MatchIndex {
            mode,
            scope,
            config: config.clone(),
            universes,
            entries: HashMap::new(),
        };
        for (id, rec) in history.records() {
            let nf = config.normalize(rec);
            index.add(id, &nf);
        }
        index
    }

    /// Indexes already-normalized failures; the universe comes from their tests.
    pub fn from_normalized<'a>(
        items: impl IntoIterator<Item = (RecordId, &'a NormalizedFailure)> + Clone,
        universes: BTreeMap<String, TestUniverse>,
        mode: MatchMode,
        scope: MatchScope,
        config: &MatchConfig,
    ) -> MatchIndex {
        let mut index = MatchIndex {
            mode,
            scope,
            config: config.clone(),
            universes,
            entries: HashMap::new(),
        };
        for (id, nf) in items {
            index.add(id, nf);
        }
        index
    }

    fn add(&mut self, id: RecordId, nf: &NormalizedFailure) {
        let sig = self.signature(nf);
        let slot = self
            .entries
            .entry((Group::of(&nf.base.test, self.scope), sig))
            .or_default();
        match id.label {
            Label::Flaky => slot.flaky.push(id),
            Label::True => slot.true_failures.push(id),
        }
    }

    pub fn signature(&self, nf: &NormalizedFailure) -> FailureSignature {
        let empty = TestUniverse::default();
        let universe = self.universes.get(&nf.base.test.project).unwrap_or(&empty);
        signature_with(nf, self.mode, self.scope, universe, &self.config)
    }

    pub fn triage(&self, nf: &NormalizedFailure) -> TriageVerdict {
        self.triage_excluding(nf, None)
    }

    /// Like [`MatchIndex::triage`], ignoring the history record `exclude`.
    pub fn triage_excluding(
        &self,
        nf: &NormalizedFailure,
        exclude: Option<&RecordId>,
    ) -> TriageVerdict {
        let key = (Group::of(&nf.base.test, self.scope), self.signature(nf));
        let Some(found) = self.entries.get(&key) else {
            return TriageVerdict::new(Basis::MatchedNone, Vec::new());
        };
        let keep = |ids: &Vec<RecordId>| {
            ids.iter()
                .filter(|id| Some(*id) != exclude)
                .cloned()
                .collect::<Vec<_>>()
        };
        TriageVerdict::from_matches(keep(&found.flaky), keep(&found.true_failures))
    }

    /// Number of (flaky, true) history records matching `nf`, not counting
    /// `exclude`.
    pub fn match_counts(
        &self,
        nf: &NormalizedFailure,
        exclude: Option<&RecordId>,
    ) -> (usize, usize) {
        let key = (Group::of(&nf.base.test, self.scope), self.signature(nf));
        let Some(found) = self.entries.get(&key) else {
            return (0, 0);
        };
        let count = |ids: &Vec<RecordId>| {
            ids.len() - exclude.map_or(0, |x| ids.iter().filter(|id| *id == x).count())
        };
        (count(&found.flaky), count(&found.true_failures))
    }
}

/// Decides flaky vs true for one failure against a labeled history.
pub fn triage(
    nf: &NormalizedFailure,
    history: &Corpus,
    mode: MatchMode,
    scope: MatchScope,
) -> TriageVerdict {
    triage_with(nf, history, mode, scope, &MatchConfig::default())
}

pub fn triage_with(
    nf: &NormalizedFailure,
    history: &Corpus,
    mode: MatchMode,
    scope: MatchScope,
    config: &MatchConfig,
) -> TriageVerdict {
    let project = history.only_project(&nf.base.test.project);
    MatchIndex::build(
        &project,
        mode,
        scope,
        config,
        std::slice::from_ref(&nf.base.test),
    )
    .triage(nf)
}

/// Flaky-failure repetition counts for one project.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRepetitiveness {
    /// Tests with at least one flaky failure.
    pub tests: usize,
    pub flaky: usize,
    /// Distinct per-test signatures, summed over tests.
    pub set: usize,
    pub uniq_per_test: usize,
    pub repet_per_test: usize,
    pub uniq_cross: usize,
    pub repet_cross: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitivenessReport {
    pub projects: BTreeMap<String, ProjectRepetitiveness>,
}

impl RepetitivenessReport {
    pub fn total(&self) -> ProjectRepetitiveness {
        self.projects
            .values()
            .fold(ProjectRepetitiveness::default(), |acc, p| {
                ProjectRepetitiveness {
                    tests: acc.tests + p.tests,
                    flaky: acc.flaky + p.flaky,
                    set: acc.set + p.set,
                    uniq_per_test: acc.uniq_per_test + p.uniq_per_test,
                    repet_per_test: acc.repet_per_test + p.repet_per_test,
                    uniq_cross: acc.uniq_cross + p.uniq_cross,
                    repet_cross: acc.repet_cross + p.repet_cross,
                }
            })
    }
}

pub fn repetitiveness(corpus: &Corpus) -> RepetitivenessReport {
    repetitiveness_with(corpus, &MatchConfig::default())
}

pub fn repetitiveness_with(corpus: &Corpus, config: &MatchConfig) -> RepetitivenessReport {
    let mut report = RepetitivenessReport::default();
    for (project, tests) in corpus.projects() {
        let universe = TestUniverse::of_project(corpus, project);
        let mut per_test: HashMap<(&TestId, FailureSignature), usize> = HashMap::new();
        let mut cross: HashMap<FailureSignature, usize> = HashMap::new();
        let mut keys = Vec::new();
        for (test, failures) in tests {
            for rec in &failures.flaky {
                let nf = config.normalize(rec);
                let local =
                    signature_with(&nf, MatchMode::Full, MatchScope::PerTest, &universe, config);
                let shared = signature_with(
                    &nf,
                    MatchMode::Full,
                    MatchScope::CrossTest,
                    &universe,
                    config,
                );
                *per_test.entry((test, local.clone())).or_default() += 1;
                *cross.entry(shared.clone()).or_default() += 1;
                keys.push((test, local, shared));
            }
        }
        let mut row = ProjectRepetitiveness {
            tests: tests.values().filter(|f| !f.flaky.is_empty()).count(),
            flaky: keys.len(),
            set: per_test.len(),
            ..Default::default()
        };
        for (test, local, shared) in keys {
            if per_test[&(test, local)] == 1 {
                row.uniq_per_test += 1;
            } else {
                row.repet_per_test += 1;
            }
            if cross[&shared] == 1 {
                row.uniq_cross += 1;
            } else {
                row.repet_cross += 1;
            }
        }
        report.projects.insert(project.to_string(), row);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_xml::read_corpus_str;
    use crate::model::{FailureRecord, StackFrame};
    use crate::normalize::normalize;

    const JOURNAL: &str = include_str!("../tests/data/journal_pair.xml");

    fn journal() -> (Corpus, Vec<NormalizedFailure>) {
        let corpus = read_corpus_str(JOURNAL).unwrap();
        let nfs = corpus.records().map(|(_, r)| normalize(r)).collect();
        (corpus, nfs)
    }

    fn journal_universe() -> TestUniverse {
        TestUniverse::new([&TestId::new("alluxio", "tachyon.JournalTest", "TableTest")])
    }

    #[test]
    fn journal_signatures() {
        let (_, nfs) = journal();
        let u = journal_universe();
        let full = signature(&nfs[0], MatchMode::Full, MatchScope::PerTest, &u);
        assert_eq!(full.exception_type, "UnknownHostException");
        assert_eq!(full.frame_keys.len(), 6);

        let bare = signature(&nfs[0], MatchMode::ExceptionOnly, MatchScope::PerTest, &u);
        assert!(bare.frame_keys.is_empty());

        let cross = signature(&nfs[0], MatchMode::Full, MatchScope::CrossTest, &u);
        assert_eq!(cross.frame_keys.len(), 5);
        assert!(!cross.frame_keys.iter().any(|k| k.contains("JournalTest")));

        let other = signature(&nfs[1], MatchMode::Full, MatchScope::PerTest, &u);
        assert!(matches(&full, &other).unwrap());
        assert!(matches(&full, &full).unwrap());
        assert!(!full.to_string().contains("ip-172"));
    }

    #[test]
    fn extra_frame_breaks_match() {
        let (_, nfs) = journal();
        let u = journal_universe();
        let a = signature(&nfs[0], MatchMode::Full, MatchScope::PerTest, &u);
        let mut longer = nfs[0].clone();
        longer
            .kept_frames
            .insert(0, StackFrame::parse("x.Y.z(Y.java:1)").unwrap());
        let b = signature(&longer, MatchMode::Full, MatchScope::PerTest, &u);
        assert!(!matches(&a, &b).unwrap());
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let (_, nfs) = journal();
        let u = journal_universe();
        let a = signature(&nfs[0], MatchMode::Full, MatchScope::PerTest, &u);
        let b = signature(&nfs[0], MatchMode::ExceptionOnly, MatchScope::PerTest, &u);
        let c = signature(&nfs[0], MatchMode::Full, MatchScope::CrossTest, &u);
        assert!(matches!(
            matches(&a, &b),
            Err(MatchError::ModeMismatch { .. })
        ));
        assert!(matches(&a, &c).is_err());
    }

    #[test]
    fn strip_line_numbers_toggle() {
        let (_, nfs) = journal();
        let config = MatchConfig {
            strip_line_numbers: true,
            ..Default::default()
        };
        let sig = signature_with(
            &nfs[0],
            MatchMode::Full,
            MatchScope::PerTest,
            &journal_universe(),
            &config,
        );
        assert_eq!(
            sig.frame_keys[1],
            "java.net.InetAddress$2.lookupAllHostAddr(InetAddress.java)"
        );
    }

    #[test]
    fn triage_journal_second_against_first() {
        let (corpus, nfs) = journal();
        let mut history = Corpus::new();
        let first = corpus.records().next().unwrap().1.clone();
        history.insert(first).unwrap();
        let verdict = triage(&nfs[1], &history, MatchMode::Full, MatchScope::PerTest);
        assert_eq!(verdict.predicted, Label::Flaky);
        assert_eq!(verdict.basis, Basis::MatchedFlakyOnly);
        assert_eq!(verdict.evidence.len(), 1);
    }

    #[test]
    fn triage_empty_history() {
        let (_, nfs) = journal();
        let verdict = triage(
            &nfs[0],
            &Corpus::new(),
            MatchMode::Full,
            MatchScope::CrossTest,
        );
        assert_eq!(verdict.predicted, Label::True);
        assert_eq!(verdict.basis, Basis::MatchedNone);
    }

    #[test]
    fn triage_four_basis_cases() {
        let (corpus, nfs) = journal();
        let rec = corpus.records().next().unwrap().1.clone();
        let relabel = |label| FailureRecord {
            label: Some(label),
            ..rec.clone()
        };
        let cases = [
            (
                vec![relabel(Label::Flaky)],
                Basis::MatchedFlakyOnly,
                Label::Flaky,
            ),
            (vec![relabel(Label::True)], Basis::MatchedTrue, Label::True),
            (
                vec![relabel(Label::Flaky), relabel(Label::True)],
                Basis::MatchedBoth,
                Label::True,
            ),
            (vec![], Basis::MatchedNone, Label::True),
        ];
        for (history, basis, predicted) in cases {
            let history = Corpus::from_records(history).unwrap();
            let v = triage(&nfs[1], &history, MatchMode::Full, MatchScope::PerTest);
            assert_eq!((v.basis, v.predicted), (basis, predicted));
        }
    }

    #[test]
    fn per_test_scope_ignores_other_tests() {
        let (corpus, nfs) = journal();
        let rec = corpus.records().next().unwrap().1.clone();
        let mut frames = rec.frames.clone();
        *frames.last_mut().unwrap() =
            StackFrame::parse("tachyon.OtherTest.setUp(OtherTest.java:20)").unwrap();
        let other = FailureRecord {
            test: TestId::new("alluxio", "tachyon.OtherTest", "t"),
            frames,
            ..rec
        };
        let history = Corpus::from_records([other]).unwrap();
        assert_eq!(
            triage(&nfs[1], &history, MatchMode::Full, MatchScope::PerTest).basis,
            Basis::MatchedNone
        );
        // across tests the JournalTest frame is dropped and the rest matches
        assert_eq!(
            triage(&nfs[1], &history, MatchMode::Full, MatchScope::CrossTest).basis,
            Basis::MatchedFlakyOnly
        );
    }

    #[test]
    fn repetitiveness_singleton() {
        let (corpus, _) = journal();
        let rec = corpus.records().next().unwrap().1.clone();
        let report = repetitiveness(&Corpus::from_records([rec]).unwrap());
        let row = report.projects["alluxio"];
        assert_eq!(
            (row.flaky, row.set, row.uniq_per_test, row.repet_per_test),
            (1, 1, 1, 0)
        );
        assert_eq!((row.uniq_cross, row.repet_cross), (1, 0));
    }

    #[test]
    fn repetitiveness_journal_pair() {
        let (corpus, _) = journal();
        let row = repetitiveness(&corpus).projects["alluxio"];
        assert_eq!(
            row,
            ProjectRepetitiveness {
                tests: 1,
                flaky: 2,
                set: 1,
                uniq_per_test: 0,
                repet_per_test: 2,
                uniq_cross: 0,
                repet_cross: 2
            }
        );
    }
}
