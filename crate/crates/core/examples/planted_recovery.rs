// Score a synthetic trace set with planted layers and check the ranking finds them.
//
// Run with `cargo run --release --example planted_recovery`.

use layerscope::eval::recovery_metrics;
use layerscope::ranking::{rank_layers, RankScope};
use layerscope::scoring::{sensitivity_table, ProjectionPolicy};
use layerscope::synth::{generate_planted, SynthConfig};
use layerscope::DivergenceConfig;

pub fn run_example() -> layerscope::Result<()> {
    let planted = [3, 9, 14, 22, 27, 31];
    let cfg = SynthConfig::new(5, 4, 32, vec![0, 250, 500, 750], 16, 11).with_planted(planted, 2.0);
    let (traces, truth) = generate_planted(&cfg)?;
    println!("generated {} records over {} layers", traces.records.len(), cfg.layers);

    let table = sensitivity_table(&traces, &DivergenceConfig::default(), ProjectionPolicy::MeanOverProjections)?;
    let ranking = rank_layers(&table, RankScope::TimeAveraged)?;
    println!("ten most sensitive layers: {:?}", &ranking.order[..10]);

    let metrics = recovery_metrics(&ranking, &truth, planted.len())?;
    println!(
        "precision@{} = {:.3}, mean rank of planted = {:.2}",
        planted.len(),
        metrics.precision_at_k,
        metrics.mean_rank_of_planted.unwrap_or(f64::NAN)
    );
    assert!(metrics.precision_at_k >= 0.8);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
