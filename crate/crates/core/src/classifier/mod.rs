//! Failure log classifier: six log features, a decision tree or Naive Bayes
//! over them, and optional minority oversampling.

pub mod bayes;
pub mod features;
pub mod oversample;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Label;

pub use bayes::NaiveBayes;
pub use features::{
    default_cut_prefixes, default_framework_prefixes, extract_features, FeatureConfig,
    FeatureVector, Flag,
};
pub use oversample::{oversample, DEFAULT_THRESHOLD};
pub use tree::{Node, SplitTest, TreeParams};

pub const FORMAT: &str = "flaketriage-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training data is empty")]
    EmptyDataset,
    #[error("smoothing must be a positive finite number, got {0}")]
    BadSmoothing(f64),
    #[error("min_leaf must be at least 1")]
    BadMinLeaf,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DecisionTree,
    NaiveBayes,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "decision_tree",
            ModelKind::NaiveBayes => "naive_bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_samples: usize,
    pub n_flaky: usize,
    pub n_true: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Params {
    DecisionTree { params: TreeParams, root: Node },
    NaiveBayes(NaiveBayes),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    summary: TrainingSummary,
    params: Params,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: TrainedModel,
}

fn summarize(data: &[(FeatureVector, Label)]) -> TrainingSummary {
    let n_flaky = data.iter().filter(|(_, l)| *l == Label::Flaky).count();
    TrainingSummary {
        n_samples: data.len(),
        n_flaky,
        n_true: data.len() - n_flaky,
        depth: None,
        smoothing: None,
    }
}

pub fn train_decision_tree(
    data: &[(FeatureVector, Label)],
    params: TreeParams,
) -> Result<TrainedModel, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if params.min_leaf == 0 {
        return Err(ClassifierError::BadMinLeaf);
    }
    let root = tree::train(data, &params);
    let summary = TrainingSummary {
        depth: Some(root.depth()),
        ..summarize(data)
    };
    Ok(TrainedModel {
        summary,
        params: Params::DecisionTree { params, root },
    })
}

pub fn train_naive_bayes(
    data: &[(FeatureVector, Label)],
    smoothing: f64,
) -> Result<TrainedModel, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if !(smoothing.is_finite() && smoothing > 0.0) {
        return Err(ClassifierError::BadSmoothing(smoothing));
    }
    let nb = bayes::train(data, smoothing);
    let summary = TrainingSummary {
        smoothing: Some(smoothing),
        ..summarize(data)
    };
    Ok(TrainedModel {
        summary,
        params: Params::NaiveBayes(nb),
    })
}

pub fn predict(m: &TrainedModel, fv: &FeatureVector) -> Label {
    m.predict(fv)
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            Params::DecisionTree { .. } => ModelKind::DecisionTree,
            Params::NaiveBayes(_) => ModelKind::NaiveBayes,
        }
    }

    pub fn summary(&self) -> &TrainingSummary {
        &self.summary
    }

    pub fn tree(&self) -> Option<&Node> {
        match &self.params {
            Params::DecisionTree { root, .. } => Some(root),
            Params::NaiveBayes(_) => None,
        }
    }

    pub fn naive_bayes(&self) -> Option<&NaiveBayes> {
        match &self.params {
            Params::NaiveBayes(nb) => Some(nb),
            Params::DecisionTree { .. } => None,
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Label {
        match &self.params {
            Params::DecisionTree { root, .. } => root.predict(fv),
            Params::NaiveBayes(nb) => nb.predict(fv),
        }
    }

    pub fn to_json(&self) -> Result<String, ClassifierError> {
        let envelope = Envelope {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&envelope)?)
    }

    pub fn from_json(text: &str) -> Result<TrainedModel, ClassifierError> {
        let envelope: Envelope = serde_json::from_str(text)?;
        if envelope.format != FORMAT {
            return Err(ClassifierError::Format(format!(
                "unexpected format {:?}",
                envelope.format
            )));
        }
        if envelope.version != FORMAT_VERSION {
            return Err(ClassifierError::Format(format!(
                "unsupported version {}",
                envelope.version
            )));
        }
        Ok(envelope.model)
    }
}
