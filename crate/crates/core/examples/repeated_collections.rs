// Combine several independent collections with a trimmed mean per cell,
// then summarise how stable each layer's rank is across the runs.
//
// Run with `cargo run --release --example repeated_collections`.

use layerscope::ranking::{rank_layers, rank_statistics, trimmed_aggregate, trimmed_mean, RankScope};
use layerscope::scoring::{sensitivity_table, ProjectionPolicy};
use layerscope::synth::{generate_planted, SynthConfig};
use layerscope::DivergenceConfig;

pub fn run_example() -> layerscope::Result<()> {
    // One wild value out of five is discarded along with the smallest.
    println!("trimmed mean of [1, 2, 3, 4, 100] = {:?}", trimmed_mean(&[1.0, 2.0, 3.0, 4.0, 100.0]));

    let cfg = DivergenceConfig::default();
    let mut tables = Vec::new();
    let mut rankings = Vec::new();
    for seed in 0..5 {
        let mut synth = SynthConfig::new(4, 3, 16, vec![0, 500], 8, seed).with_planted([2, 5, 11], 1.5);
        synth.collection_id = format!("run{seed}");
        let (traces, _) = generate_planted(&synth)?;
        let table = sensitivity_table(&traces, &cfg, ProjectionPolicy::MeanOverProjections)?;
        rankings.push(rank_layers(&table, RankScope::TimeAveraged)?);
        tables.push(table);
    }

    let merged = trimmed_aggregate(&tables)?;
    println!("merged collections: {:?}", merged.header.collection_ids);
    let consensus = rank_layers(&merged, RankScope::TimeAveraged)?;
    println!("consensus top 3: {:?}", &consensus.order[..3]);

    for stat in rank_statistics(&rankings)?.iter().take(4) {
        println!("layer {:>2}: mean rank {:.2} +- {:.2}", stat.layer, stat.mean_rank, stat.std_rank);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
