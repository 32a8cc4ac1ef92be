//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the library's divergence or scoring code: the
//! closed forms are written in their textbook shape and the distances as
//! plain nested loops over explicit index pairs.
#![allow(dead_code)]

use layerscope::trace::{CellKey, CellView, GaussianSummary, Projection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_summary(rng: &mut impl Rng, d: usize, mu: (f64, f64), sigma: (f64, f64)) -> GaussianSummary {
    GaussianSummary {
        mu: (0..d).map(|_| rng.random_range(mu.0..mu.1)).collect(),
        sigma: (0..d).map(|_| rng.random_range(sigma.0..sigma.1)).collect(),
    }
}

pub fn random_cell(rng: &mut impl Rng, m: usize, n: usize, d: usize) -> CellView {
    let clusters = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| random_summary(rng, d, (-3.0, 3.0), (0.2, 3.0)))
                .collect()
        })
        .collect();
    CellView::from_clusters(
        CellKey {
            layer: 0,
            timestep: 0,
            projection: Projection::Key,
        },
        clusters,
    )
}

/// Textbook KL(p || q) for diagonal Gaussians with floored sigmas.
pub fn kl_textbook(p: &GaussianSummary, q: &GaussianSummary, floor: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..p.mu.len() {
        let sp = p.sigma[i].max(floor);
        let sq = q.sigma[i].max(floor);
        let dm = p.mu[i] - q.mu[i];
        total += (sq / sp).ln() + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
    }
    total
}

/// Gaussian-midpoint JSD built from [`kl_textbook`].
pub fn jsd_textbook(p: &GaussianSummary, q: &GaussianSummary, floor: f64) -> f64 {
    let fp = floored(p, floor);
    let fq = floored(q, floor);
    let m = GaussianSummary {
        mu: fp.mu.iter().zip(&fq.mu).map(|(a, b)| (a + b) / 2.0).collect(),
        sigma: fp.sigma.iter().zip(&fq.sigma).map(|(a, b)| (a + b) / 2.0).collect(),
    };
    0.5 * (kl_textbook(&fp, &m, floor) + kl_textbook(&fq, &m, floor))
}

pub fn floored(p: &GaussianSummary, floor: f64) -> GaussianSummary {
    GaussianSummary {
        mu: p.mu.clone(),
        sigma: p.sigma.iter().map(|s| s.max(floor)).collect(),
    }
}

fn members(cell: &CellView) -> Vec<&Vec<GaussianSummary>> {
    cell.clusters.iter().map(|c| &c.members).collect()
}

/// Inner distance by explicit (s, i, j) loops with i < j.
pub fn inner_brute(cell: &CellView, floor: f64) -> f64 {
    let clusters = members(cell);
    let m = clusters.len();
    let n = clusters[0].len();
    let mut outer_sum = 0.0;
    for s in 0..m {
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    sum += jsd_textbook(&clusters[s][i], &clusters[s][j], floor);
                    pairs += 1;
                }
            }
        }
        outer_sum += sum / pairs as f64;
    }
    outer_sum / m as f64
}

/// Outer distance by explicit (s1, s2, i, j) loops with s1 < s2.
pub fn outer_brute(cell: &CellView, floor: f64) -> f64 {
    let clusters = members(cell);
    let m = clusters.len();
    let n = clusters[0].len();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for s1 in 0..m {
        for s2 in 0..m {
            if s1 >= s2 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    sum += jsd_textbook(&clusters[s1][i], &clusters[s2][j], floor);
                    pairs += 1;
                }
            }
        }
    }
    sum / pairs as f64
}

/// Sort-then-slice trimmed mean: drop one value from each end.
pub fn trimmed_sort_oracle(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = if v.len() >= 3 { &v[1..v.len() - 1] } else { &v[..] };
    kept.iter().sum::<f64>() / kept.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
