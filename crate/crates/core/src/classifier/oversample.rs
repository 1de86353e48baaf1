use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.10;

/// Random duplication of minority samples until `minority / majority` reaches
/// `threshold`. Originals are kept in place; copies are appended. Returns the
/// input unchanged when the ratio already holds, when one class is absent, or
/// when `threshold` is not a positive finite number.
pub fn oversample<T: Clone>(data: &[(T, Label)], threshold: f64, seed: u64) -> Vec<(T, Label)> {
    let mut out = data.to_vec();
    let flaky: Vec<usize> = (0..data.len())
        .filter(|&i| data[i].1 == Label::Flaky)
        .collect();
    let n_true = data.len() - flaky.len();
    let (minority, majority) = if flaky.len() <= n_true {
        (flaky, n_true)
    } else {
        (
            (0..data.len())
                .filter(|&i| data[i].1 == Label::True)
                .collect(),
            flaky.len(),
        )
    };
    if minority.is_empty() || !(threshold.is_finite() && threshold > 0.0) {
        return out;
    }
    let target = threshold * majority as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = minority.len();
    while (count as f64) < target {
        let pick = minority[rng.gen_range(0..minority.len())];
        out.push(data[pick].clone());
        count += 1;
    }
    out
}
