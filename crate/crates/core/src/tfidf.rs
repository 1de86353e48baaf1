//! TF-IDF weighting over failure token lists and nearest-neighbor triage.
//!
//! A document is one failure: the tokens of its exception type followed by
//! the tokens of each stack line. Messages contribute nothing.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::dedup::{Basis, MatchConfig, TriageVerdict};
use crate::model::{Corpus, FailureRecord, Label, RecordId};

/// Characters replaced by whitespace before splitting on dots.
pub const SYMBOLS: [char; 8] = ['(', ')', ':', '<', '>', '$', ',', ';'];

/// Similarities closer than this are treated as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TfidfError {
    #[error("document has no tokens")]
    EmptyDocument,
    #[error("term {0:?} does not occur in the corpus")]
    UnknownTerm(String),
    #[error("no labeled history in project {0:?}")]
    EmptyHistory(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDocument {
    pub failure_id: String,
    pub tokens: Vec<String>,
}

/// Sparse term weights; absent terms weigh zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedVector {
    pub weights: BTreeMap<String, f64>,
}

impl WeightedVector {
    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.values().all(|w| *w == 0.0)
    }
}

/// Logarithm used for IDF. Only rescales weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBase(f64);

impl LogBase {
    pub const NATURAL: LogBase = LogBase(std::f64::consts::E);

    /// `None` unless `base` is finite, positive and not 1.
    pub fn new(base: f64) -> Option<LogBase> {
        (base.is_finite() && base > 0.0 && base != 1.0).then_some(LogBase(base))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn log(self, x: f64) -> f64 {
        if self.0 == std::f64::consts::E {
            x.ln()
        } else {
            x.ln() / self.0.ln()
        }
    }
}

impl Default for LogBase {
    fn default() -> Self {
        LogBase::NATURAL
    }
}

/// Tokens of one piece of trace text: symbols become whitespace, then the
/// text is split on whitespace and dots.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.replace(SYMBOLS, " ")
        .split(|c: char| c.is_whitespace() || c == '.')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn tokenize(rec: &FailureRecord) -> TokenDocument {
    tokenize_as(rec.test.full_name(), rec)
}

pub fn tokenize_as(failure_id: impl Into<String>, rec: &FailureRecord) -> TokenDocument {
    let mut tokens = tokenize_text(&rec.exception_type);
    for frame in &rec.frames {
        tokens.extend(tokenize_text(&frame.raw));
    }
    TokenDocument {
        failure_id: failure_id.into(),
        tokens,
    }
}

pub fn tf(term: &str, doc: &TokenDocument) -> Result<f64, TfidfError> {
    if doc.tokens.is_empty() {
        return Err(TfidfError::EmptyDocument);
    }
    let count = doc.tokens.iter().filter(|t| *t == term).count();
    Ok(count as f64 / doc.tokens.len() as f64)
}

pub fn idf(term: &str, corpus: &[TokenDocument]) -> Result<f64, TfidfError> {
    idf_with_base(term, corpus, LogBase::NATURAL)
}

pub fn idf_with_base(
    term: &str,
    corpus: &[TokenDocument],
    base: LogBase,
) -> Result<f64, TfidfError> {
    if corpus.is_empty() {
        return Err(TfidfError::EmptyCorpus);
    }
    let containing = corpus
        .iter()
        .filter(|d| d.tokens.iter().any(|t| t == term))
        .count();
    if containing == 0 {
        return Err(TfidfError::UnknownTerm(term.to_string()));
    }
    Ok(base.log(corpus.len() as f64 / containing as f64))
}

/// Term counts of one document.
fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for t in tokens {
        *out.entry(t.as_str()).or_insert(0) += 1;
    }
    out
}

/// Document frequencies of a corpus, computed once.
#[derive(Debug, Clone, Default)]
pub struct DocumentFrequencies {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl DocumentFrequencies {
    pub fn new<'a>(docs: impl IntoIterator<Item = &'a TokenDocument>) -> Self {
        let mut out = DocumentFrequencies::default();
        for doc in docs {
            out.add(&doc.tokens);
        }
        out
    }

    fn add(&mut self, tokens: &[String]) {
        self.n_docs += 1;
        for term in counts(tokens).into_keys() {
            *self.df.entry(term.to_string()).or_insert(0) += 1;
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_count(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str, base: LogBase) -> Option<f64> {
        match self.doc_count(term) {
            0 => None,
            n => Some(base.log(self.n_docs as f64 / n as f64)),
        }
    }

    fn weigh(&self, tokens: &[String], base: LogBase) -> WeightedVector {
        let len = tokens.len() as f64;
        let weights = counts(tokens)
            .into_iter()
            .map(|(term, count)| {
                (
                    term.to_string(),
                    count as f64 / len * self.idf(term, base).unwrap_or(0.0),
                )
            })
            .collect();
        WeightedVector { weights }
    }
}

pub fn vectorize(
    doc: &TokenDocument,
    corpus: &[TokenDocument],
) -> Result<WeightedVector, TfidfError> {
    vectorize_with_base(doc, corpus, LogBase::NATURAL)
}

pub fn vectorize_with_base(
    doc: &TokenDocument,
    corpus: &[TokenDocument],
    base: LogBase,
) -> Result<WeightedVector, TfidfError> {
    if doc.tokens.is_empty() {
        return Err(TfidfError::EmptyDocument);
    }
    if corpus.is_empty() {
        return Err(TfidfError::EmptyCorpus);
    }
    Ok(DocumentFrequencies::new(corpus).weigh(&doc.tokens, base))
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &WeightedVector, b: &WeightedVector) -> f64 {
    let (small, large) = if a.weights.len() <= b.weights.len() {
        (a, b)
    } else {
        (b, a)
    };
    let dot: f64 = small.weights.iter().map(|(t, w)| w * large.weight(t)).sum();
    let norms = a.norm() * b.norm();
    if norms == 0.0 {
        0.0
    } else {
        (dot / norms).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnVerdict {
    pub verdict: TriageVerdict,
    /// Cosine similarity of the nearest labeled neighbor(s).
    pub similarity: f64,
}

/// Labeled documents of one project, ready for nearest-neighbor queries.
/// The query itself joins the corpus when IDF weights are computed, so each
/// term carries two precomputed IDF values: with and without the query.
#[derive(Debug, Clone)]
pub struct TfidfIndex {
    vocabulary: HashMap<String, usize>,
    idf_without_query: Vec<f64>,
    idf_with_query: Vec<f64>,
    n_docs: usize,
    base: LogBase,
    /// Per document: term ids with their term frequency.
    docs: Vec<(RecordId, Vec<(usize, f64)>)>,
}

impl TfidfIndex {
    pub fn new(docs: Vec<(RecordId, Vec<String>)>, base: LogBase) -> TfidfIndex {
        let mut vocabulary = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        let mut indexed = Vec::with_capacity(docs.len());
        for (id, tokens) in docs {
            let len = tokens.len() as f64;
            let terms = counts(&tokens)
                .into_iter()
                .map(|(term, count)| {
                    let next = vocabulary.len();
                    let tid = *vocabulary.entry(term.to_string()).or_insert(next);
                    if tid == df.len() {
                        df.push(0);
                    }
                    df[tid] += 1;
                    (tid, count as f64 / len)
                })
                .collect();
            indexed.push((id, terms));
        }
        let n = (indexed.len() + 1) as f64;
        TfidfIndex {
            vocabulary,
            idf_without_query: df.iter().map(|&d| base.log(n / d as f64)).collect(),
            idf_with_query: df.iter().map(|&d| base.log(n / (d + 1) as f64)).collect(),
            n_docs: indexed.len(),
            base,
            docs: indexed,
        }
    }

    /// Indexes the records of `project`, normalized with `config`.
    pub fn of_project(
        history: &Corpus,
        project: &str,
        config: &MatchConfig,
        base: LogBase,
    ) -> TfidfIndex {
        let docs = history
            .project_records(project)
            .map(|(id, rec)| (id, tokenize(&config.normalize(rec).to_record()).tokens))
            .collect();
        TfidfIndex::new(docs, base)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Weight of each query term keyed by vocabulary id, plus the norm
    /// contribution of query terms unknown to the index.
    fn query_vector(&self, query: &[String]) -> (HashMap<usize, f64>, f64) {
        let len = query.len() as f64;
        let fresh_idf = self.base.log((self.n_docs + 1) as f64);
        let mut known = HashMap::new();
        let mut unknown_sq = 0.0;
        for (term, count) in counts(query) {
            let tf = count as f64 / len;
            match self.vocabulary.get(term) {
                Some(&tid) => {
                    known.insert(tid, tf * self.idf_with_query[tid]);
                }
                None => unknown_sq += (tf * fresh_idf).powi(2),
            }
        }
        (known, unknown_sq)
    }

    pub fn classify(&self, query: &[String]) -> NnVerdict {
        let none = |similarity| NnVerdict {
            verdict: TriageVerdict::new(Basis::MatchedNone, Vec::new()),
            similarity,
        };
        if query.is_empty() || self.docs.is_empty() {
            return none(0.0);
        }
        let (q, unknown_sq) = self.query_vector(query);
        let q_norm = (q.values().map(|w| w * w).sum::<f64>() + unknown_sq).sqrt();
        if q_norm == 0.0 {
            return none(0.0);
        }
        let scored: Vec<(f64, &RecordId)> = self
            .docs
            .iter()
            .map(|(id, terms)| {
                let mut dot = 0.0;
                let mut norm_sq = 0.0;
                for &(tid, tf) in terms {
                    let w = match q.get(&tid) {
                        Some(qw) => {
                            let w = tf * self.idf_with_query[tid];
                            dot += w * qw;
                            w
                        }
                        None => tf * self.idf_without_query[tid],
                    };
                    norm_sq += w * w;
                }
                let s = if norm_sq == 0.0 {
                    0.0
                } else {
                    (dot / (norm_sq.sqrt() * q_norm)).clamp(0.0, 1.0)
                };
                (s, id)
            })
            .collect();
        let best = scored.iter().map(|(s, _)| *s).fold(0.0, f64::max);
        if best <= TIE_TOLERANCE {
            return none(best);
        }
        let mut flaky = Vec::new();
        let mut true_failures = Vec::new();
        for (s, id) in scored {
            if best - s <= TIE_TOLERANCE {
                match id.label {
                    Label::Flaky => flaky.push(id.clone()),
                    Label::True => true_failures.push(id.clone()),
                }
            }
        }
        flaky.sort();
        true_failures.sort();
        NnVerdict {
            verdict: TriageVerdict::from_matches(flaky, true_failures),
            similarity: best,
        }
    }
}

pub fn classify_nn(query: &FailureRecord, history: &Corpus) -> Result<NnVerdict, TfidfError> {
    classify_nn_with(query, history, &MatchConfig::default(), LogBase::NATURAL)
}

pub fn classify_nn_with(
    query: &FailureRecord,
    history: &Corpus,
    config: &MatchConfig,
    base: LogBase,
) -> Result<NnVerdict, TfidfError> {
    let project = &query.test.project;
    let index = TfidfIndex::of_project(history, project, config, base);
    if index.is_empty() {
        return Err(TfidfError::EmptyHistory(project.clone()));
    }
    let tokens = tokenize(&config.normalize(query).to_record()).tokens;
    Ok(index.classify(&tokens))
}
