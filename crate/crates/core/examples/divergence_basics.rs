// KL and Jensen-Shannon divergence between diagonal Gaussian summaries.
//
// Run with `cargo run --example divergence_basics`.

use layerscope::divergence::{kl_numeric_oracle, midpoint, SimpsonGrid};
use layerscope::{jsd, kl_diag_gauss, DivergenceConfig, GaussianSummary};

pub fn run_example() -> layerscope::Result<()> {
    let cfg = DivergenceConfig::default();
    let p = GaussianSummary::new(vec![0.0, 1.0], vec![1.0, 0.5])?;
    let q = GaussianSummary::new(vec![0.5, 1.0], vec![2.0, 0.5])?;

    let kl_pq = kl_diag_gauss(&p, &q, &cfg)?;
    let kl_qp = kl_diag_gauss(&q, &p, &cfg)?;
    println!("KL(p||q) = {kl_pq:.6}  KL(q||p) = {kl_qp:.6}  (asymmetric)");

    let m = midpoint(&p, &q)?;
    println!("midpoint mu = {:?} sigma = {:?}", m.mu, m.sigma);

    let js = jsd(&p, &q, &cfg)?;
    assert!((js - jsd(&q, &p, &cfg)?).abs() < 1e-12);
    println!("JSD(p, q) = {js:.6}  (symmetric)");

    // Closed form against numerical integration on the first channel.
    let p1 = GaussianSummary::new(vec![0.0], vec![1.0])?;
    let q1 = GaussianSummary::new(vec![0.5], vec![2.0])?;
    let closed = kl_diag_gauss(&p1, &q1, &cfg)?;
    let numeric = kl_numeric_oracle(&p1, &q1, &SimpsonGrid::default())?;
    println!("1-d KL closed form {closed:.10} vs Simpson {numeric:.10}");
    assert!((closed - numeric).abs() / closed < 1e-6);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
