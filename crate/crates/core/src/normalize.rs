//! Stack trace normalization: drop JVM-generated reflection frames, then cut
//! the trace below the frame that points at the test.

use serde::{Deserialize, Serialize};

use crate::model::{FailureRecord, StackFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationBasis {
    /// Cut at the first frame starting with the test's full name.
    TestMethodFrame,
    /// No test-method frame; cut at the last frame of the test class.
    TestClassFrame,
    None,
}

impl TruncationBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            TruncationBasis::TestMethodFrame => "test_method_frame",
            TruncationBasis::TestClassFrame => "test_class_frame",
            TruncationBasis::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedFailure {
    pub base: FailureRecord,
    pub kept_frames: Vec<StackFrame>,
    pub truncation_basis: TruncationBasis,
}

impl NormalizedFailure {
    /// The base record with its frames replaced by the kept ones.
    pub fn to_record(&self) -> FailureRecord {
        FailureRecord {
            frames: self.kept_frames.clone(),
            ..self.base.clone()
        }
    }
}

/// Class-name markers of runtime-generated reflection accessors. A frame is
/// noise when its class contains a marker immediately followed by digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseFilter {
    pub markers: Vec<String>,
}

impl Default for NoiseFilter {
    fn default() -> Self {
        NoiseFilter {
            markers: vec![
                "GeneratedMethodAccessor".to_string(),
                "GeneratedConstructorAccessor".to_string(),
            ],
        }
    }
}

impl NoiseFilter {
    pub fn is_noise(&self, frame: &StackFrame) -> bool {
        let class = frame.class_fqn.as_str();
        self.markers.iter().any(|marker| {
            class.match_indices(marker.as_str()).any(|(pos, m)| {
                class[pos + m.len()..]
                    .chars()
                    .next()
                    .is_some_and(|c| c.is_ascii_digit())
            })
        })
    }
}

pub fn normalize(rec: &FailureRecord) -> NormalizedFailure {
    normalize_with(rec, &NoiseFilter::default())
}

pub fn normalize_with(rec: &FailureRecord, noise: &NoiseFilter) -> NormalizedFailure {
    let surviving: Vec<&StackFrame> = rec.frames.iter().filter(|f| !noise.is_noise(f)).collect();
    let test_name = rec.test.full_name();

    let method_cut = surviving
        .iter()
        .position(|f| f.qualified_method().starts_with(&test_name));
    let (end, truncation_basis) = match method_cut {
        Some(i) => (i + 1, TruncationBasis::TestMethodFrame),
        None => match surviving
            .iter()
            .rposition(|f| f.class_fqn == rec.test.class_fqn)
        {
            Some(i) => (i + 1, TruncationBasis::TestClassFrame),
            None => (surviving.len(), TruncationBasis::None),
        },
    };

    NormalizedFailure {
        base: rec.clone(),
        kept_frames: surviving[..end].iter().map(|f| (*f).clone()).collect(),
        truncation_basis,
    }
}
