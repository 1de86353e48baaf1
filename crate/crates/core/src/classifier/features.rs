use serde::{Deserialize, Serialize};

use crate::model::TestUniverse;
use crate::normalize::NormalizedFailure;

/// The six log features of one failure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureVector {
    pub exception_type: String,
    /// Some frame starts with the test's full name.
    pub test_name_in_trace: bool,
    /// Some frame contains the test class name.
    pub test_class_in_trace: bool,
    /// Some frame starts with the full name of another known test.
    pub other_tests_in_trace: bool,
    pub junit_in_trace: bool,
    /// Some frame comes from code under test.
    pub cut_in_trace: bool,
}

/// The boolean features, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    TestName,
    TestClass,
    OtherTests,
    Junit,
    Cut,
}

impl Flag {
    pub const ALL: [Flag; 5] = [
        Flag::TestName,
        Flag::TestClass,
        Flag::OtherTests,
        Flag::Junit,
        Flag::Cut,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::TestName => "test_name_in_trace",
            Flag::TestClass => "test_class_in_trace",
            Flag::OtherTests => "other_tests_in_trace",
            Flag::Junit => "junit_in_trace",
            Flag::Cut => "cut_in_trace",
        }
    }
}

impl FeatureVector {
    pub fn flag(&self, flag: Flag) -> bool {
        match flag {
            Flag::TestName => self.test_name_in_trace,
            Flag::TestClass => self.test_class_in_trace,
            Flag::OtherTests => self.other_tests_in_trace,
            Flag::Junit => self.junit_in_trace,
            Flag::Cut => self.cut_in_trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Package prefixes of code under test, e.g. `tachyon.`.
    pub cut_prefixes: Vec<String>,
    pub framework_prefixes: Vec<String>,
}

pub fn default_framework_prefixes() -> Vec<String> {
    vec!["org.junit.".to_string(), "junit.".to_string()]
}

impl FeatureConfig {
    /// CUT prefix defaults to the longest common package of the test classes.
    pub fn for_project(universe: &TestUniverse) -> Self {
        FeatureConfig {
            cut_prefixes: default_cut_prefixes(universe),
            framework_prefixes: default_framework_prefixes(),
        }
    }
}

pub fn default_cut_prefixes(universe: &TestUniverse) -> Vec<String> {
    let mut common: Option<Vec<&str>> = None;
    for test in universe.tests() {
        let package: Vec<&str> = match test.class_fqn.rsplit_once('.') {
            Some((pkg, _)) => pkg.split('.').collect(),
            None => Vec::new(),
        };
        common = Some(match common {
            None => package,
            Some(prev) => prev
                .iter()
                .zip(&package)
                .take_while(|(a, b)| a == b)
                .map(|(a, _)| *a)
                .collect(),
        });
    }
    match common {
        Some(segments) if !segments.is_empty() => vec![format!("{}.", segments.join("."))],
        _ => Vec::new(),
    }
}

pub fn extract_features(
    nf: &NormalizedFailure,
    known_tests: &TestUniverse,
    config: &FeatureConfig,
) -> FeatureVector {
    let test = &nf.base.test;
    let full_name = test.full_name();
    let frames = &nf.kept_frames;
    let starts_with_any =
        |class: &str, prefixes: &[String]| prefixes.iter().any(|p| class.starts_with(p.as_str()));
    FeatureVector {
        exception_type: nf.base.exception_type.clone(),
        test_name_in_trace: frames.iter().any(|f| f.raw.starts_with(&full_name)),
        test_class_in_trace: frames.iter().any(|f| f.raw.contains(&test.class_fqn)),
        other_tests_in_trace: frames
            .iter()
            .any(|f| known_tests.any_prefix_of(&f.raw, Some(test))),
        junit_in_trace: frames
            .iter()
            .any(|f| starts_with_any(&f.class_fqn, &config.framework_prefixes)),
        cut_in_trace: frames.iter().any(|f| {
            starts_with_any(&f.class_fqn, &config.cut_prefixes)
                && f.class_fqn != test.class_fqn
                && !known_tests.is_test_class(&f.class_fqn)
        }),
    }
}
