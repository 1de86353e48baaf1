//! CART decision tree over [`FeatureVector`]s with Gini impurity.
//!
//! Boolean features split on their value; the exception type splits on
//! equality with one observed category. Split quality is compared with exact
//! integer arithmetic, so ties are real ties and are broken by feature order,
//! then by category name.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, Flag};
use crate::model::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    ExceptionIs(String),
    Flag(Flag),
}

impl SplitTest {
    pub fn holds(&self, fv: &FeatureVector) -> bool {
        match self {
            SplitTest::ExceptionIs(value) => &fv.exception_type == value,
            SplitTest::Flag(flag) => fv.flag(*flag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: Label,
        flaky: usize,
        true_failures: usize,
    },
    Split {
        test: SplitTest,
        yes: Box<Node>,
        no: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, fv: &FeatureVector) -> Label {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { label, .. } => return *label,
                Node::Split { test, yes, no } => node = if test.holds(fv) { yes } else { no },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { yes, no, .. } => 1 + yes.depth().max(no.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { yes, no, .. } => yes.leaves() + no.leaves(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    flaky: u64,
    true_failures: u64,
}

impl Counts {
    fn of<'a>(items: impl Iterator<Item = &'a (FeatureVector, Label)>) -> Counts {
        let mut c = Counts::default();
        for (_, label) in items {
            c.add(*label);
        }
        c
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Flaky => self.flaky += 1,
            Label::True => self.true_failures += 1,
        }
    }

    fn n(self) -> u64 {
        self.flaky + self.true_failures
    }

    fn sum_sq(self) -> u128 {
        (self.flaky as u128).pow(2) + (self.true_failures as u128).pow(2)
    }

    fn is_pure(self) -> bool {
        self.flaky == 0 || self.true_failures == 0
    }

    /// Majority label, ties resolved to true.
    fn majority(self) -> Label {
        if self.flaky > self.true_failures {
            Label::Flaky
        } else {
            Label::True
        }
    }
}

/// Weighted child impurity is `n - S` with `S = Σ_child Σ_k n_k² / n_child`;
/// a larger `S` means a purer split. Kept as an exact fraction.
#[derive(Debug, Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(yes: Counts, no: Counts) -> Purity {
        let (ny, nn) = (yes.n() as u128, no.n() as u128);
        Purity {
            num: yes.sum_sq() * nn + no.sum_sq() * ny,
            den: ny * nn,
        }
    }

    fn cmp(&self, other: &Purity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

pub(crate) fn train(data: &[(FeatureVector, Label)], params: &TreeParams) -> Node {
    let refs: Vec<&(FeatureVector, Label)> = data.iter().collect();
    grow(&refs, 0, params)
}

fn grow(items: &[&(FeatureVector, Label)], depth: usize, params: &TreeParams) -> Node {
    let counts = Counts::of(items.iter().copied());
    let leaf = || Node::Leaf {
        label: counts.majority(),
        flaky: counts.flaky as usize,
        true_failures: counts.true_failures as usize,
    };
    if counts.is_pure() || params.max_depth.is_some_and(|max| depth >= max) {
        return leaf();
    }
    let Some(test) = best_split(items, params.min_leaf.max(1)) else {
        return leaf();
    };
    let (yes, no): (Vec<_>, Vec<_>) = items.iter().copied().partition(|(fv, _)| test.holds(fv));
    Node::Split {
        test,
        yes: Box::new(grow(&yes, depth + 1, params)),
        no: Box::new(grow(&no, depth + 1, params)),
    }
}

/// Candidates in tie-break order: exception categories (sorted), then flags.
/// Zero-gain splits are accepted so XOR-like patterns can still be separated.
fn best_split(items: &[&(FeatureVector, Label)], min_leaf: usize) -> Option<SplitTest> {
    let categories: BTreeSet<&str> = items
        .iter()
        .map(|(fv, _)| fv.exception_type.as_str())
        .collect();
    let candidates = categories
        .into_iter()
        .map(|c| SplitTest::ExceptionIs(c.to_string()))
        .chain(Flag::ALL.into_iter().map(SplitTest::Flag));

    let mut best: Option<(Purity, SplitTest)> = None;
    for test in candidates {
        let mut yes = Counts::default();
        let mut no = Counts::default();
        for (fv, label) in items {
            if test.holds(fv) {
                yes.add(*label);
            } else {
                no.add(*label);
            }
        }
        if (yes.n() as usize) < min_leaf || (no.n() as usize) < min_leaf {
            continue;
        }
        let purity = Purity::of(yes, no);
        if best
            .as_ref()
            .is_none_or(|(b, _)| purity.cmp(b) == Ordering::Greater)
        {
            best = Some((purity, test));
        }
    }
    best.map(|(_, test)| test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(exception: &str, flags: [bool; 5]) -> FeatureVector {
        FeatureVector {
            exception_type: exception.into(),
            test_name_in_trace: flags[0],
            test_class_in_trace: flags[1],
            other_tests_in_trace: flags[2],
            junit_in_trace: flags[3],
            cut_in_trace: flags[4],
        }
    }

    fn uhe_data() -> Vec<(FeatureVector, Label)> {
        vec![
            (
                fv("UnknownHostException", [false, true, false, false, true]),
                Label::Flaky,
            ),
            (
                fv("UnknownHostException", [true, true, false, true, false]),
                Label::Flaky,
            ),
            (
                fv("NullPointerException", [false, true, false, false, true]),
                Label::True,
            ),
            (
                fv("AssertionError", [true, true, false, true, false]),
                Label::True,
            ),
            (
                fv("AssertionError", [false, false, false, true, true]),
                Label::True,
            ),
        ]
    }

    #[test]
    fn one_split_on_exception() {
        let tree = train(&uhe_data(), &TreeParams::default());
        assert_eq!(tree.depth(), 1);
        match &tree {
            Node::Split { test, .. } => {
                assert_eq!(test, &SplitTest::ExceptionIs("UnknownHostException".into()))
            }
            other => panic!("expected split, got {other:?}"),
        }
        for (x, y) in uhe_data() {
            assert_eq!(tree.predict(&x), y);
        }
        // unseen category follows the not-equal branch
        assert_eq!(
            tree.predict(&fv("SocketException", [false; 5])),
            Label::True
        );
    }

    #[test]
    fn identical_vectors_give_constant_majority() {
        let x = fv("E", [false; 5]);
        let data = vec![
            (x.clone(), Label::Flaky),
            (x.clone(), Label::Flaky),
            (x.clone(), Label::True),
        ];
        let tree = train(&data, &TreeParams::default());
        assert_eq!(
            tree,
            Node::Leaf {
                label: Label::Flaky,
                flaky: 2,
                true_failures: 1
            }
        );

        let tied = vec![(x.clone(), Label::Flaky), (x.clone(), Label::True)];
        assert_eq!(
            train(&tied, &TreeParams::default()).predict(&x),
            Label::True
        );
    }

    #[test]
    fn xor_pattern_is_learned() {
        let data = vec![
            (fv("A", [false; 5]), Label::Flaky),
            (fv("A", [true, false, false, false, false]), Label::True),
            (fv("B", [false; 5]), Label::True),
            (fv("B", [true, false, false, false, false]), Label::Flaky),
        ];
        let tree = train(&data, &TreeParams::default());
        for (x, y) in &data {
            assert_eq!(tree.predict(x), *y);
        }
    }

    #[test]
    fn depth_and_leaf_limits() {
        let data = vec![
            (fv("A", [false; 5]), Label::Flaky),
            (fv("A", [true, false, false, false, false]), Label::True),
            (fv("B", [false; 5]), Label::True),
            (fv("B", [true, false, false, false, false]), Label::Flaky),
        ];
        let stump = train(
            &data,
            &TreeParams {
                max_depth: Some(0),
                min_leaf: 1,
            },
        );
        assert_eq!(stump.depth(), 0);
        let capped = train(
            &data,
            &TreeParams {
                max_depth: Some(1),
                min_leaf: 1,
            },
        );
        assert!(capped.depth() <= 1);
        let wide = train(
            &data,
            &TreeParams {
                max_depth: None,
                min_leaf: 3,
            },
        );
        assert_eq!(wide.depth(), 0);
    }

    #[test]
    fn exact_purity_comparison() {
        let a = Purity::of(
            Counts {
                flaky: 2,
                true_failures: 0,
            },
            Counts {
                flaky: 1,
                true_failures: 1,
            },
        );
        let b = Purity::of(
            Counts {
                flaky: 1,
                true_failures: 1,
            },
            Counts {
                flaky: 2,
                true_failures: 0,
            },
        );
        assert_eq!(a.cmp(&b), Ordering::Equal);
        let c = Purity::of(
            Counts {
                flaky: 2,
                true_failures: 0,
            },
            Counts {
                flaky: 0,
                true_failures: 2,
            },
        );
        assert_eq!(c.cmp(&a), Ordering::Greater);
    }
}
