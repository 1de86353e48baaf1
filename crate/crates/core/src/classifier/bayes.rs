//! Categorical Naive Bayes with additive smoothing.
//!
//! The model keeps raw counts; log-probabilities are derived at prediction
//! time so an absent class (log 0) never has to be serialized.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, Flag};
use crate::model::Label;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub samples: usize,
    pub exceptions: BTreeMap<String, usize>,
    /// Number of samples with each flag set, indexed by [`Flag::index`].
    pub flags: [usize; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub smoothing: f64,
    pub flaky: ClassCounts,
    pub true_failures: ClassCounts,
    /// Distinct exception types seen in training, across both classes.
    pub exception_cardinality: usize,
}

impl NaiveBayes {
    fn class(&self, label: Label) -> &ClassCounts {
        match label {
            Label::Flaky => &self.flaky,
            Label::True => &self.true_failures,
        }
    }

    /// Unnormalized log posterior per label; `-inf` for a class with no
    /// training samples.
    pub fn log_scores(&self, fv: &FeatureVector) -> [(Label, f64); 2] {
        Label::ALL.map(|label| (label, self.log_score(label, fv)))
    }

    fn log_score(&self, label: Label, fv: &FeatureVector) -> f64 {
        let class = self.class(label);
        let total = self.flaky.samples + self.true_failures.samples;
        if class.samples == 0 {
            return f64::NEG_INFINITY;
        }
        let a = self.smoothing;
        let n = class.samples as f64;
        let mut score = (n / total as f64).ln();

        let seen = class
            .exceptions
            .get(&fv.exception_type)
            .copied()
            .unwrap_or(0) as f64;
        score += ((seen + a) / (n + a * self.exception_cardinality as f64)).ln();

        for flag in Flag::ALL {
            let set = class.flags[flag.index()] as f64;
            let count = if fv.flag(flag) { set } else { n - set };
            score += ((count + a) / (n + 2.0 * a)).ln();
        }
        score
    }

    /// Ties go to true.
    pub fn predict(&self, fv: &FeatureVector) -> Label {
        if self.log_score(Label::Flaky, fv) > self.log_score(Label::True, fv) {
            Label::Flaky
        } else {
            Label::True
        }
    }
}

pub(crate) fn train(data: &[(FeatureVector, Label)], smoothing: f64) -> NaiveBayes {
    let mut flaky = ClassCounts::default();
    let mut true_failures = ClassCounts::default();
    let mut categories = BTreeSet::new();
    for (fv, label) in data {
        let class = match label {
            Label::Flaky => &mut flaky,
            Label::True => &mut true_failures,
        };
        class.samples += 1;
        *class
            .exceptions
            .entry(fv.exception_type.clone())
            .or_insert(0) += 1;
        for flag in Flag::ALL {
            if fv.flag(flag) {
                class.flags[flag.index()] += 1;
            }
        }
        categories.insert(fv.exception_type.as_str());
    }
    NaiveBayes {
        smoothing,
        flaky,
        true_failures,
        exception_cardinality: categories.len(),
    }
}
