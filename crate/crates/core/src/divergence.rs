//! Divergences between diagonal Gaussians.
//!
//! The JSD used for scoring is not the information-theoretic one: the
//! mixture of the two inputs is replaced by a single Gaussian `M` whose mean
//! and standard deviation are the averages of the inputs'. It is therefore
//! not bounded by `ln 2`.
//!
//! Standard deviations are floored at [`DivergenceConfig::sigma_floor`] before
//! use so that constant channels (sigma = 0) stay finite.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::trace::GaussianSummary;

/// How the midpoint Gaussian's spread is formed from the two inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MidpointRule {
    /// `sigma_M = (sigma_p + sigma_q) / 2`
    #[default]
    MeanSigma,
    /// `sigma_M = sqrt((sigma_p^2 + sigma_q^2) / 2)`
    MeanVariance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceConfig {
    pub sigma_floor: f64,
    pub midpoint: MidpointRule,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            sigma_floor: 1e-6,
            midpoint: MidpointRule::MeanSigma,
        }
    }
}

impl DivergenceConfig {
    pub fn new(sigma_floor: f64, midpoint: MidpointRule) -> Result<Self> {
        if !(sigma_floor > 0.0 && sigma_floor.is_finite()) {
            return Err(Error::contract(format!(
                "sigma_floor must be positive and finite, got {sigma_floor}"
            )));
        }
        Ok(Self {
            sigma_floor,
            midpoint,
        })
    }

    #[inline]
    fn floor(&self, sigma: f64) -> f64 {
        sigma.max(self.sigma_floor)
    }
}

fn check_dims(p: &GaussianSummary, q: &GaussianSummary) -> Result<()> {
    if p.mu.len() != q.mu.len() || p.sigma.len() != p.mu.len() || q.sigma.len() != q.mu.len() {
        return Err(Error::contract(format!(
            "dimension mismatch: {} vs {}",
            p.mu.len(),
            q.mu.len()
        )));
    }
    Ok(())
}

/// Streaming pairwise summation: blocks of 32 summed directly, block sums
/// merged like a binary counter.
pub(crate) struct PairwiseAccumulator {
    block: f64,
    in_block: usize,
    partials: [f64; 64],
    occupied: u64,
}

impl PairwiseAccumulator {
    const BLOCK: usize = 32;

    pub(crate) fn new() -> Self {
        Self {
            block: 0.0,
            in_block: 0,
            partials: [0.0; 64],
            occupied: 0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        self.block += x;
        self.in_block += 1;
        if self.in_block == Self::BLOCK {
            let mut carry = self.block;
            let mut level = 0;
            while self.occupied & (1 << level) != 0 {
                carry += self.partials[level];
                self.occupied &= !(1 << level);
                level += 1;
            }
            self.partials[level] = carry;
            self.occupied |= 1 << level;
            self.block = 0.0;
            self.in_block = 0;
        }
    }

    pub(crate) fn total(&self) -> f64 {
        let mut total = self.block;
        for level in 0..64 {
            if self.occupied & (1 << level) != 0 {
                total += self.partials[level];
            }
        }
        total
    }
}

/// KL(p || q) for one channel, sigmas already floored.
///
/// Written as `(x - ln(1 + x)) + x^2 / 2 + dmu^2 / (2 sq^2)` with
/// `x = sp / sq - 1`, which is the textbook closed form rearranged so that
/// nearly equal sigmas do not cancel catastrophically.
#[inline]
fn kl_channel(mp: f64, sp: f64, mq: f64, sq: f64) -> f64 {
    let x = (sp - sq) / sq;
    let dm = (mp - mq) / sq;
    (x - x.ln_1p()) + 0.5 * x * x + 0.5 * dm * dm
}

/// Closed-form KL divergence between diagonal Gaussians, natural log.
pub fn kl_diag_gauss(p: &GaussianSummary, q: &GaussianSummary, cfg: &DivergenceConfig) -> Result<f64> {
    check_dims(p, q)?;
    let mut acc = PairwiseAccumulator::new();
    for i in 0..p.mu.len() {
        acc.add(kl_channel(
            p.mu[i],
            cfg.floor(p.sigma[i]),
            q.mu[i],
            cfg.floor(q.sigma[i]),
        ));
    }
    Ok(acc.total())
}

/// Average Gaussian of `p` and `q`: mean of the means, mean of the sigmas.
pub fn midpoint(p: &GaussianSummary, q: &GaussianSummary) -> Result<GaussianSummary> {
    midpoint_with(p, q, MidpointRule::MeanSigma)
}

pub fn midpoint_with(p: &GaussianSummary, q: &GaussianSummary, rule: MidpointRule) -> Result<GaussianSummary> {
    check_dims(p, q)?;
    let mu = p.mu.iter().zip(&q.mu).map(|(a, b)| (a + b) * 0.5).collect();
    let sigma = p
        .sigma
        .iter()
        .zip(&q.sigma)
        .map(|(&a, &b)| mid_sigma(a, b, rule))
        .collect();
    Ok(GaussianSummary { mu, sigma })
}

#[inline]
fn mid_sigma(a: f64, b: f64, rule: MidpointRule) -> f64 {
    match rule {
        MidpointRule::MeanSigma => (a + b) * 0.5,
        MidpointRule::MeanVariance => ((a * a + b * b) * 0.5).sqrt(),
    }
}

/// Jensen-Shannon divergence with a Gaussian midpoint:
/// `(KL(p || M) + KL(q || M)) / 2`.
pub fn jsd(p: &GaussianSummary, q: &GaussianSummary, cfg: &DivergenceConfig) -> Result<f64> {
    check_dims(p, q)?;
    let mut acc = PairwiseAccumulator::new();
    for i in 0..p.mu.len() {
        let (mp, sp) = (p.mu[i], cfg.floor(p.sigma[i]));
        let (mq, sq) = (q.mu[i], cfg.floor(q.sigma[i]));
        let mm = (mp + mq) * 0.5;
        let sm = mid_sigma(sp, sq, cfg.midpoint);
        acc.add(0.5 * (kl_channel(mp, sp, mm, sm) + kl_channel(mq, sq, mm, sm)));
    }
    Ok(acc.total())
}

/// Integration settings for [`kl_numeric_oracle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimpsonGrid {
    /// Number of Simpson intervals per dimension (even, at least 4096).
    pub intervals: usize,
    /// Half-width of the window around `mu_p`, in units of `sigma_p`.
    pub half_width_sigmas: f64,
}

impl Default for SimpsonGrid {
    fn default() -> Self {
        Self {
            intervals: 8192,
            half_width_sigmas: 12.0,
        }
    }
}

/// KL(p || q) by composite Simpson integration of `p log(p / q)` per channel.
///
/// Independent of the closed form; used to check it. The integrand carries
/// the weight of `p`, so each window is centered on `mu_p` and spans
/// `half_width_sigmas` of `sigma_p` either side. No sigma floor is applied.
pub fn kl_numeric_oracle(p: &GaussianSummary, q: &GaussianSummary, grid: &SimpsonGrid) -> Result<f64> {
    check_dims(p, q)?;
    if grid.intervals < 4096 || grid.intervals % 2 != 0 {
        return Err(Error::contract("Simpson grid needs an even interval count >= 4096"));
    }
    if p.sigma.iter().chain(&q.sigma).any(|&s| s <= 0.0) {
        return Err(Error::contract("numeric oracle needs strictly positive sigmas"));
    }
    let ln_sqrt_2pi = 0.5 * (2.0 * PI).ln();
    let mut total = 0.0;
    for i in 0..p.mu.len() {
        let (mp, sp, mq, sq) = (p.mu[i], p.sigma[i], q.mu[i], q.sigma[i]);
        let log_p = |x: f64| -sp.ln() - ln_sqrt_2pi - (x - mp) * (x - mp) / (2.0 * sp * sp);
        let log_q = |x: f64| -sq.ln() - ln_sqrt_2pi - (x - mq) * (x - mq) / (2.0 * sq * sq);
        let f = |x: f64| {
            let lp = log_p(x);
            lp.exp() * (lp - log_q(x))
        };
        let lo = mp - grid.half_width_sigmas * sp;
        let hi = mp + grid.half_width_sigmas * sp;
        let n = grid.intervals;
        let h = (hi - lo) / n as f64;
        let mut sum = f(lo) + f(hi);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(lo + k as f64 * h);
        }
        total += sum * h / 3.0;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: &[f64], sigma: &[f64]) -> GaussianSummary {
        GaussianSummary {
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
        }
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let cfg = DivergenceConfig::default();
        let p = g(&[0.0], &[1.0]);
        assert_eq!(kl_diag_gauss(&p, &p, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_mean_shift_is_half() {
        let cfg = DivergenceConfig::default();
        let v = kl_diag_gauss(&g(&[0.0], &[1.0]), &g(&[1.0], &[1.0]), &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_textbook_form() {
        let cfg = DivergenceConfig::default();
        let (mp, sp, mq, sq) = (0.3_f64, 0.7_f64, -1.2_f64, 2.1_f64);
        let direct = (sq / sp).ln() + (sp * sp + (mp - mq).powi(2)) / (2.0 * sq * sq) - 0.5;
        let v = kl_diag_gauss(&g(&[mp], &[sp]), &g(&[mq], &[sq]), &cfg).unwrap();
        assert!((v - direct).abs() < 1e-14 * direct);
    }

    #[test]
    fn midpoint_examples() {
        let p = g(&[0.0], &[1.0]);
        let q = g(&[2.0], &[3.0]);
        assert_eq!(midpoint(&p, &q).unwrap(), g(&[1.0], &[2.0]));
        assert_eq!(midpoint(&p, &p).unwrap(), p);
        assert_eq!(midpoint(&p, &q).unwrap(), midpoint(&q, &p).unwrap());
        let mv = midpoint_with(&p, &q, MidpointRule::MeanVariance).unwrap();
        assert!((mv.sigma[0] - 5.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn jsd_examples() {
        let cfg = DivergenceConfig::default();
        let p = g(&[0.0], &[1.0]);
        assert_eq!(jsd(&p, &p, &cfg).unwrap(), 0.0);
        let q = g(&[2.0], &[1.0]);
        assert!((jsd(&p, &q, &cfg).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_is_floored() {
        let cfg = DivergenceConfig::default();
        let p = g(&[0.0, 1.0], &[0.0, 0.0]);
        let q = g(&[0.0, 1.0], &[1e-7, 0.0]);
        assert_eq!(jsd(&p, &q, &cfg).unwrap(), 0.0);
        let r = g(&[0.5, 1.0], &[0.0, 0.0]);
        assert!(jsd(&p, &r, &cfg).unwrap().is_finite());
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let cfg = DivergenceConfig::default();
        let p = g(&[0.0], &[1.0]);
        let q = g(&[0.0, 1.0], &[1.0, 1.0]);
        assert!(matches!(jsd(&p, &q, &cfg), Err(Error::Contract(_))));
        assert!(matches!(kl_diag_gauss(&p, &q, &cfg), Err(Error::Contract(_))));
        assert!(matches!(midpoint(&p, &q), Err(Error::Contract(_))));
    }

    #[test]
    fn config_rejects_nonpositive_floor() {
        assert!(DivergenceConfig::new(0.0, MidpointRule::MeanSigma).is_err());
        assert!(DivergenceConfig::new(1e-3, MidpointRule::MeanVariance).is_ok());
    }

    #[test]
    fn oracle_examples() {
        let grid = SimpsonGrid::default();
        let std = g(&[0.0], &[1.0]);
        assert!(kl_numeric_oracle(&std, &std, &grid).unwrap().abs() < 1e-9);
        let v = kl_numeric_oracle(&std, &g(&[1.0], &[1.0]), &grid).unwrap();
        assert!((v - 0.5).abs() < 1e-7);
    }

    #[test]
    fn accumulator_matches_exact_integer_sum() {
        let mut acc = PairwiseAccumulator::new();
        for i in 1..=5000 {
            acc.add(i as f64);
        }
        assert_eq!(acc.total(), 12_502_500.0);
    }
}
