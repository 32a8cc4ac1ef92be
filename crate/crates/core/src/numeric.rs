//! Small numeric helpers shared across modules.

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation; error grows with log(n) instead of n.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Rounds `x` to the nearest integer with halves going up.
///
/// Products like `0.35 * 10.0` land a hair below the half they denote, so
/// values within 1e-9 of a half are treated as that half.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5 + 1e-9).floor() as i64
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}
