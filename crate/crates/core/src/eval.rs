//! Evaluation arithmetic: confusion matrices, precision/recall/specificity,
//! leave-one-out scoring of signature matching, stratified k-fold
//! cross-validation of the classifiers, and per-exception tables.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    extract_features, oversample, train_decision_tree, train_naive_bayes, ClassifierError,
    FeatureConfig, TreeParams,
};
use crate::dedup::{MatchConfig, MatchIndex, MatchMode, MatchScope};
use crate::model::{Corpus, FailureRecord, Label, RecordId, TestId, TestUniverse};
use crate::normalize::NormalizedFailure;
use crate::tfidf::{tokenize, LogBase, TfidfIndex};

pub const DEFAULT_K: usize = 5;
/// Projects with fewer flaky failures are left out of cross-validation.
pub const MIN_FLAKY_FOR_CV: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record {0} has no label")]
    UnlabeledRecord(String),
    #[error("project {project}: {have} flaky failures, need at least {need}")]
    InsufficientFlaky {
        project: String,
        have: usize,
        need: usize,
    },
    #[error("project {project}: {have} true failures, need at least {need}")]
    InsufficientTrue {
        project: String,
        have: usize,
        need: usize,
    },
    #[error("k must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("no records for project {0:?}")]
    UnknownProject(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Tp,
    Fn,
    Fp,
    Tn,
}

impl Outcome {
    /// Outcome of predicting `predicted` for a failure labeled `actual`.
    pub fn of(actual: Label, predicted: Label) -> Outcome {
        match (actual, predicted) {
            (Label::Flaky, Label::Flaky) => Outcome::Tp,
            (Label::Flaky, Label::True) => Outcome::Fn,
            (Label::True, Label::Flaky) => Outcome::Fp,
            (Label::True, Label::True) => Outcome::Tn,
        }
    }

    /// The matching rules: a flaky failure is a TP only when it matches
    /// flaky failures and no true ones; a true failure is an FP as soon as
    /// it matches any flaky failure.
    pub fn of_matches(actual: Label, flaky_matches: usize, true_matches: usize) -> Outcome {
        match actual {
            Label::Flaky if flaky_matches > 0 && true_matches == 0 => Outcome::Tp,
            Label::Flaky => Outcome::Fn,
            Label::True if flaky_matches > 0 => Outcome::Fp,
            Label::True => Outcome::Tn,
        }
    }
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Tn => self.tn += 1,
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.tn += other.tn;
    }

    pub fn flaky(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn true_failures(&self) -> usize {
        self.fp + self.tn
    }

    pub fn total(&self) -> usize {
        self.flaky() + self.true_failures()
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = ConfusionMatrix>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), |mut acc, m| {
            acc.add(&m);
            acc
        })
    }
}

/// `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricSet {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricSet {
        precision,
        recall,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        f1,
    }
}

/// Percentage with one decimal, or `n/a`.
pub fn percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "n/a".to_string(),
    }
}

/// One scored failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredRecord {
    pub id: RecordId,
    pub exception_type: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingScore {
    pub matrix: ConfusionMatrix,
    /// Tests with at least one TP failure.
    pub tests_with_tp: usize,
    /// Tests with at least one FN failure.
    pub tests_with_fn: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingReport {
    pub projects: BTreeMap<String, MatchingScore>,
}

impl MatchingReport {
    pub fn total(&self) -> MatchingScore {
        self.projects
            .values()
            .fold(MatchingScore::default(), |mut acc, s| {
                acc.matrix.add(&s.matrix);
                acc.tests_with_tp += s.tests_with_tp;
                acc.tests_with_fn += s.tests_with_fn;
                acc
            })
    }
}

/// Scores every failure against all other failures in scope.
pub fn score_records(
    c: &Corpus,
    mode: MatchMode,
    scope: MatchScope,
    config: &MatchConfig,
) -> Vec<ScoredRecord> {
    let normalized: Vec<(RecordId, NormalizedFailure)> = c
        .records()
        .map(|(id, rec)| (id, config.normalize(rec)))
        .collect();
    let universes: BTreeMap<String, TestUniverse> = c
        .project_names()
        .map(|p| (p.to_string(), TestUniverse::of_project(c, p)))
        .collect();
    let index = MatchIndex::from_normalized(
        normalized.iter().map(|(id, nf)| (id.clone(), nf)),
        universes,
        mode,
        scope,
        config,
    );
    normalized
        .iter()
        .map(|(id, nf)| {
            let (flaky, true_matches) = index.match_counts(nf, Some(id));
            ScoredRecord {
                id: id.clone(),
                exception_type: nf.base.exception_type.clone(),
                outcome: Outcome::of_matches(id.label, flaky, true_matches),
            }
        })
        .collect()
}

pub fn score_matching(c: &Corpus, mode: MatchMode, scope: MatchScope) -> MatchingReport {
    score_matching_with(c, mode, scope, &MatchConfig::default())
}

pub fn score_matching_with(
    c: &Corpus,
    mode: MatchMode,
    scope: MatchScope,
    config: &MatchConfig,
) -> MatchingReport {
    let mut report = MatchingReport::default();
    let mut per_test: BTreeMap<&TestId, (bool, bool)> = BTreeMap::new();
    let scored = score_records(c, mode, scope, config);
    for s in &scored {
        report
            .projects
            .entry(s.id.test.project.clone())
            .or_default()
            .matrix
            .record(s.outcome);
        let flags = per_test.entry(&s.id.test).or_default();
        flags.0 |= s.outcome == Outcome::Tp;
        flags.1 |= s.outcome == Outcome::Fn;
    }
    for (test, (tp, fn_)) in per_test {
        let row = report
            .projects
            .get_mut(&test.project)
            .expect("scored project");
        row.tests_with_tp += tp as usize;
        row.tests_with_fn += fn_ as usize;
    }
    report
}

/// Builds a corpus from loose records, rejecting unlabeled ones.
pub fn labeled_corpus(
    records: impl IntoIterator<Item = FailureRecord>,
) -> Result<Corpus, EvalError> {
    let mut corpus = Corpus::new();
    for rec in records {
        if rec.label.is_none() {
            return Err(EvalError::UnlabeledRecord(rec.test.to_string()));
        }
        corpus
            .insert(rec)
            .map_err(|e| EvalError::UnlabeledRecord(e.to_string()))?;
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionRow {
    pub exception: String,
    pub projects: usize,
    pub tests: usize,
    pub failures: usize,
    #[serde(rename = "true")]
    pub true_failures: usize,
    pub flaky: usize,
    pub matrix: ConfusionMatrix,
}

/// Matching outcomes grouped by exception type (per-test scope), sorted by
/// failure count, most frequent first.
pub fn exception_frequency(c: &Corpus, mode: MatchMode) -> Vec<ExceptionRow> {
    exception_frequency_with(c, mode, &MatchConfig::default())
}

pub fn exception_frequency_with(
    c: &Corpus,
    mode: MatchMode,
    config: &MatchConfig,
) -> Vec<ExceptionRow> {
    struct Acc<'a> {
        projects: BTreeSet<&'a str>,
        tests: BTreeSet<&'a TestId>,
        matrix: ConfusionMatrix,
    }
    let scored = score_records(c, mode, MatchScope::PerTest, config);
    let mut rows: BTreeMap<&str, Acc> = BTreeMap::new();
    for s in &scored {
        let acc = rows
            .entry(s.exception_type.as_str())
            .or_insert_with(|| Acc {
                projects: BTreeSet::new(),
                tests: BTreeSet::new(),
                matrix: ConfusionMatrix::default(),
            });
        acc.projects.insert(&s.id.test.project);
        acc.tests.insert(&s.id.test);
        acc.matrix.record(s.outcome);
    }
    let mut out: Vec<ExceptionRow> = rows
        .into_iter()
        .map(|(exception, acc)| ExceptionRow {
            exception: exception.to_string(),
            projects: acc.projects.len(),
            tests: acc.tests.len(),
            failures: acc.matrix.total(),
            true_failures: acc.matrix.true_failures(),
            flaky: acc.matrix.flaky(),
            matrix: acc.matrix,
        })
        .collect();
    out.sort_by(|a, b| {
        b.failures
            .cmp(&a.failures)
            .then_with(|| a.exception.cmp(&b.exception))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Match { mode: MatchMode, scope: MatchScope },
    Tree(TreeParams),
    Bayes { smoothing: f64 },
    Tfidf,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Match { .. } => "match",
            Method::Tree(_) => "tree",
            Method::Bayes { .. } => "bayes",
            Method::Tfidf => "tfidf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub method: Method,
    /// Oversampling threshold applied to each training split, if any.
    pub oversample: Option<f64>,
    pub min_flaky: usize,
    pub match_config: MatchConfig,
    /// Worker threads for project-level parallelism; 1 runs inline.
    pub jobs: usize,
}

impl CvConfig {
    pub fn new(method: Method) -> Self {
        CvConfig {
            k: DEFAULT_K,
            seed: 0,
            method,
            oversample: None,
            min_flaky: MIN_FLAKY_FOR_CV,
            match_config: MatchConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub flaky: usize,
    #[serde(rename = "true")]
    pub true_failures: usize,
    pub matrix: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub project: String,
    pub folds: Vec<FoldResult>,
    pub aggregate: ConfusionMatrix,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub project: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusCv {
    pub projects: BTreeMap<String, CvReport>,
    pub skipped: Vec<Skipped>,
}

impl CorpusCv {
    pub fn aggregate(&self) -> ConfusionMatrix {
        self.projects.values().map(|r| r.aggregate).sum()
    }
}

/// Seeded per-class shuffle followed by round-robin assignment: returns the
/// fold of every input position.
pub fn assign_folds(labels: &[Label], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (slot, i) in members.into_iter().enumerate() {
            folds[i] = slot % k;
        }
    }
    folds
}

struct Prepared {
    ids: Vec<RecordId>,
    normalized: Vec<NormalizedFailure>,
    universe: TestUniverse,
}

/// Cross-validates one project. Fails if either class has fewer than `k`
/// failures.
pub fn stratified_cv_project(
    c: &Corpus,
    project: &str,
    cfg: &CvConfig,
) -> Result<CvReport, EvalError> {
    if cfg.k < 2 {
        return Err(EvalError::BadFoldCount(cfg.k));
    }
    let (ids, normalized): (Vec<_>, Vec<_>) = c
        .project_records(project)
        .map(|(id, rec)| (id, cfg.match_config.normalize(rec)))
        .unzip();
    if ids.is_empty() {
        return Err(EvalError::UnknownProject(project.to_string()));
    }
    let labels: Vec<Label> = ids.iter().map(|id| id.label).collect();
    let flaky = labels.iter().filter(|l| **l == Label::Flaky).count();
    let true_failures = labels.len() - flaky;
    if flaky < cfg.k {
        return Err(EvalError::InsufficientFlaky {
            project: project.to_string(),
            have: flaky,
            need: cfg.k,
        });
    }
    if true_failures < cfg.k {
        return Err(EvalError::InsufficientTrue {
            project: project.to_string(),
            have: true_failures,
            need: cfg.k,
        });
    }
    let prepared = Prepared {
        ids,
        normalized,
        universe: TestUniverse::of_project(c, project),
    };
    let folds = assign_folds(&labels, cfg.k, cfg.seed);

    let mut results = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == fold).collect();
        let train = match cfg.oversample {
            Some(threshold) => {
                let tagged: Vec<(usize, Label)> = train.iter().map(|&i| (i, labels[i])).collect();
                let seed = cfg.seed.wrapping_add(fold as u64 + 1);
                oversample(&tagged, threshold, seed)
                    .into_iter()
                    .map(|(i, _)| i)
                    .collect()
            }
            None => train,
        };
        let predictions = predict_fold(&prepared, &train, &test, cfg)?;
        let mut matrix = ConfusionMatrix::default();
        for (&i, predicted) in test.iter().zip(predictions) {
            matrix.record(Outcome::of(labels[i], predicted));
        }
        results.push(FoldResult {
            fold,
            flaky: matrix.flaky(),
            true_failures: matrix.true_failures(),
            matrix,
        });
    }
    let aggregate: ConfusionMatrix = results.iter().map(|f| f.matrix).sum();
    Ok(CvReport {
        project: project.to_string(),
        folds: results,
        aggregate,
        metrics: metrics(&aggregate),
    })
}

fn predict_fold(
    p: &Prepared,
    train: &[usize],
    test: &[usize],
    cfg: &CvConfig,
) -> Result<Vec<Label>, EvalError> {
    Ok(match cfg.method {
        Method::Match { mode, scope } => {
            let project = p.ids[0].test.project.clone();
            let universes = BTreeMap::from([(project, p.universe.clone())]);
            let items = train.iter().map(|&i| (p.ids[i].clone(), &p.normalized[i]));
            let index =
                MatchIndex::from_normalized(items, universes, mode, scope, &cfg.match_config);
            test.iter()
                .map(|&i| index.triage(&p.normalized[i]).predicted)
                .collect()
        }
        Method::Tree(_) | Method::Bayes { .. } => {
            let features = FeatureConfig::for_project(&p.universe);
            let fv = |i: usize| extract_features(&p.normalized[i], &p.universe, &features);
            let data: Vec<_> = train.iter().map(|&i| (fv(i), p.ids[i].label)).collect();
            let model = match cfg.method {
                Method::Tree(params) => train_decision_tree(&data, params)?,
                Method::Bayes { smoothing } => train_naive_bayes(&data, smoothing)?,
                _ => unreachable!(),
            };
            test.iter().map(|&i| model.predict(&fv(i))).collect()
        }
        Method::Tfidf => {
            let tokens = |i: usize| tokenize(&p.normalized[i].to_record()).tokens;
            let index = TfidfIndex::new(
                train
                    .iter()
                    .map(|&i| (p.ids[i].clone(), tokens(i)))
                    .collect(),
                LogBase::NATURAL,
            );
            test.iter()
                .map(|&i| index.classify(&tokens(i)).verdict.predicted)
                .collect()
        }
    })
}

/// Runs a closure over projects, in parallel when `jobs > 1`, keeping
/// project order in the result.
pub fn per_project<T, F>(projects: &[String], jobs: usize, f: F) -> Result<Vec<T>, EvalError>
where
    T: Send,
    F: Fn(&str) -> T + Sync,
{
    if jobs <= 1 {
        return Ok(projects.iter().map(|p| f(p)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
    Ok(pool.install(|| projects.par_iter().map(|p| f(p)).collect()))
}

/// Cross-validates every project with at least `min_flaky` flaky failures;
/// others, and projects too small for `k` folds, are reported as skipped.
pub fn stratified_cv(c: &Corpus, cfg: &CvConfig) -> Result<CorpusCv, EvalError> {
    let projects: Vec<String> = c.project_names().map(str::to_string).collect();
    let outcomes = per_project(&projects, cfg.jobs, |project| {
        let flaky = c
            .project_records(project)
            .filter(|(id, _)| id.label == Label::Flaky)
            .count();
        if flaky < cfg.min_flaky {
            return Err(format!(
                "{flaky} flaky failures, fewer than {}",
                cfg.min_flaky
            ));
        }
        stratified_cv_project(c, project, cfg).map_err(|e| e.to_string())
    })?;
    let mut out = CorpusCv::default();
    for (project, outcome) in projects.into_iter().zip(outcomes) {
        match outcome {
            Ok(report) => {
                out.projects.insert(project, report);
            }
            Err(reason) => out.skipped.push(Skipped { project, reason }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_xml::read_corpus_str;
    use crate::model::StackFrame;

    fn rec(test: &TestId, exception: &str, frames: &[&str], label: Label) -> FailureRecord {
        FailureRecord::new(test.clone(), exception, "")
            .with_frames(
                frames
                    .iter()
                    .map(|f| StackFrame::parse(f).unwrap())
                    .collect(),
            )
            .with_label(label)
    }

    #[test]
    fn published_rows() {
        let m = metrics(&ConfusionMatrix::new(9173, 7685, 1933, 30862));
        assert!((m.precision.unwrap() - 0.826).abs() < 5e-4);
        assert!((m.recall.unwrap() - 0.544).abs() < 5e-4);
        assert!((m.specificity.unwrap() - 0.941).abs() < 5e-4);
        let z = metrics(&ConfusionMatrix::new(322, 0, 0, 76));
        assert_eq!(
            (z.precision, z.recall, z.specificity, z.f1),
            (Some(1.0), Some(1.0), Some(1.0), Some(1.0))
        );
    }

    #[test]
    fn undefined_metrics() {
        let m = metrics(&ConfusionMatrix::new(0, 3, 0, 2));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert_eq!(percent(m.precision), "n/a");
        assert_eq!(percent(Some(0.8259)), "82.6");
        assert_eq!(metrics(&ConfusionMatrix::default()), MetricSet::default());
    }

    #[test]
    fn journal_pair_scores_two_tp() {
        let corpus = read_corpus_str(include_str!("../tests/data/journal_pair.xml")).unwrap();
        let report = score_matching(&corpus, MatchMode::Full, MatchScope::PerTest);
        let alluxio = &report.projects["alluxio"];
        assert_eq!(alluxio.matrix, ConfusionMatrix::new(2, 0, 0, 0));
        assert_eq!((alluxio.tests_with_tp, alluxio.tests_with_fn), (1, 0));
    }

    #[test]
    fn singleton_is_false_negative() {
        let t = TestId::new("p", "a.T", "m");
        let corpus = Corpus::from_records([rec(&t, "E", &[], Label::Flaky)]).unwrap();
        let report = score_matching(&corpus, MatchMode::Full, MatchScope::PerTest);
        assert_eq!(report.total().matrix, ConfusionMatrix::new(0, 1, 0, 0));
    }

    #[test]
    fn shared_signature_across_labels() {
        let t = TestId::new("p", "a.T", "m");
        let frames = ["x.Y.z(Y.java:1)"];
        let corpus = Corpus::from_records([
            rec(&t, "E", &frames, Label::Flaky),
            rec(&t, "E", &frames, Label::True),
            rec(&t, "Other", &frames, Label::True),
        ])
        .unwrap();
        let report = score_matching(&corpus, MatchMode::Full, MatchScope::PerTest);
        assert_eq!(report.total().matrix, ConfusionMatrix::new(0, 1, 1, 1));
    }

    #[test]
    fn exception_table() {
        let t = TestId::new("p", "a.T", "m");
        let u = TestId::new("q", "b.U", "n");
        let corpus = Corpus::from_records([
            rec(&t, "Net", &["x.A.a(A.java:1)"], Label::Flaky),
            rec(&t, "Net", &["x.A.a(A.java:1)"], Label::Flaky),
            rec(&u, "Net", &["x.B.b(B.java:1)"], Label::Flaky),
            rec(&t, "Assert", &["x.C.c(C.java:1)"], Label::True),
            rec(&t, "Assert", &["x.C.c(C.java:2)"], Label::Flaky),
        ])
        .unwrap();
        let rows = exception_frequency(&corpus, MatchMode::Full);
        assert_eq!(rows[0].exception, "Net");
        assert_eq!(
            (
                rows[0].projects,
                rows[0].tests,
                rows[0].failures,
                rows[0].flaky
            ),
            (2, 2, 3, 3)
        );
        assert_eq!(rows[0].matrix, ConfusionMatrix::new(2, 1, 0, 0));

        let coarse = exception_frequency(&corpus, MatchMode::ExceptionOnly);
        let assert_row = coarse.iter().find(|r| r.exception == "Assert").unwrap();
        assert_eq!(assert_row.matrix, ConfusionMatrix::new(0, 1, 1, 0));
        assert!(exception_frequency(&Corpus::new(), MatchMode::Full).is_empty());
    }

    #[test]
    fn round_robin_fold_sizes() {
        let labels: Vec<Label> = (0..20)
            .map(|i| if i < 10 { Label::Flaky } else { Label::True })
            .collect();
        let folds = assign_folds(&labels, 5, 9);
        for f in 0..5 {
            let flaky = (0..10).filter(|&i| folds[i] == f).count();
            let tru = (10..20).filter(|&i| folds[i] == f).count();
            assert_eq!((flaky, tru), (2, 2));
        }
        assert_eq!(assign_folds(&labels, 5, 9), folds);
    }

    fn separable(project: &str, n: usize) -> Vec<FailureRecord> {
        let t = TestId::new(project, "a.T", "m");
        (0..n)
            .flat_map(|i| {
                let line = format!("x.S.run(S.java:{})", i % 3);
                [
                    rec(&t, "Net", &[&line], Label::Flaky),
                    rec(&t, "Assert", &[&line], Label::True),
                ]
            })
            .collect()
    }

    #[test]
    fn separable_corpus_is_perfect() {
        let corpus = Corpus::from_records(separable("p", 12)).unwrap();
        for method in [
            Method::Tree(TreeParams::default()),
            Method::Bayes { smoothing: 1.0 },
            Method::Tfidf,
            Method::Match {
                mode: MatchMode::Full,
                scope: MatchScope::PerTest,
            },
        ] {
            let cfg = CvConfig {
                seed: 3,
                ..CvConfig::new(method)
            };
            let report = stratified_cv_project(&corpus, "p", &cfg).unwrap();
            assert_eq!(
                report.aggregate,
                ConfusionMatrix::new(12, 0, 0, 12),
                "{}",
                method.name()
            );
            assert!(report.folds.iter().all(|f| f.flaky >= 1));
            assert_eq!(stratified_cv_project(&corpus, "p", &cfg).unwrap(), report);
        }
    }

    #[test]
    fn cv_preconditions() {
        let corpus = Corpus::from_records(separable("p", 3)).unwrap();
        let cfg = CvConfig::new(Method::Tfidf);
        assert!(matches!(
            stratified_cv_project(&corpus, "p", &cfg),
            Err(EvalError::InsufficientFlaky { have: 3, .. })
        ));
        let whole = stratified_cv(&corpus, &cfg).unwrap();
        assert!(whole.projects.is_empty());
        assert_eq!(whole.skipped[0].project, "p");

        let t = TestId::new("q", "a.T", "m");
        let only_flaky =
            Corpus::from_records((0..6).map(|_| rec(&t, "E", &[], Label::Flaky))).unwrap();
        assert!(matches!(
            stratified_cv_project(&only_flaky, "q", &cfg),
            Err(EvalError::InsufficientTrue { .. })
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut records = separable("p", 12);
        records.extend(separable("q", 15));
        records.extend(separable("r", 4));
        let corpus = Corpus::from_records(records).unwrap();
        let cfg = CvConfig {
            oversample: Some(0.1),
            ..CvConfig::new(Method::Tree(TreeParams::default()))
        };
        let serial = stratified_cv(&corpus, &cfg).unwrap();
        let parallel = stratified_cv(&corpus, &CvConfig { jobs: 4, ..cfg }).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.projects.len(), 2);
        assert_eq!(serial.skipped.len(), 1);
    }

    #[test]
    fn unlabeled_records_rejected() {
        let t = TestId::new("p", "a.T", "m");
        let err = labeled_corpus([FailureRecord::new(t, "E", "")]).unwrap_err();
        assert!(matches!(err, EvalError::UnlabeledRecord(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Corpus> {
            let row = (0..3usize, 0..3usize, 0..3usize, any::<bool>());
            proptest::collection::vec(row, 0..40).prop_map(|rows| {
                Corpus::from_records(rows.into_iter().map(|(t, e, line, flaky)| {
                    let test = TestId::new(["p", "q"][t % 2], "a.T", format!("m{t}"));
                    let frame = format!("x.S.run(S.java:{line})");
                    rec(
                        &test,
                        ["A", "B", "C"][e],
                        &[&frame],
                        if flaky { Label::Flaky } else { Label::True },
                    )
                }))
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn matrix_totals_match_label_counts(c in corpus(), exception_only in any::<bool>(), cross in any::<bool>()) {
                let mode = if exception_only { MatchMode::ExceptionOnly } else { MatchMode::Full };
                let scope = if cross { MatchScope::CrossTest } else { MatchScope::PerTest };
                let total = score_matching(&c, mode, scope).total().matrix;
                prop_assert_eq!(total.flaky(), c.count(Label::Flaky));
                prop_assert_eq!(total.true_failures(), c.count(Label::True));
                let by_exception: ConfusionMatrix = exception_frequency(&c, mode).into_iter().map(|r| r.matrix).sum();
                prop_assert_eq!(by_exception, score_matching(&c, mode, MatchScope::PerTest).total().matrix);
            }

            #[test]
            fn fold_sizes_balanced(labels in proptest::collection::vec(any::<bool>(), 0..60), k in 2..8usize, seed in any::<u64>()) {
                let labels: Vec<Label> = labels.into_iter().map(|f| if f { Label::Flaky } else { Label::True }).collect();
                let folds = assign_folds(&labels, k, seed);
                for class in Label::ALL {
                    let sizes: Vec<usize> = (0..k).map(|f| (0..labels.len()).filter(|&i| labels[i] == class && folds[i] == f).count()).collect();
                    prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                }
            }
        }
    }
}
