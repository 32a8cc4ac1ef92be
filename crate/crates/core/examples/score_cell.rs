// Inner and outer distances and the clustering score of a single cell.
//
// Run with `cargo run --example score_cell`.

use layerscope::scoring::{clustering_score, inner_distance, outer_distance};
use layerscope::trace::{CellKey, CellView};
use layerscope::{DivergenceConfig, GaussianSummary, Projection};

fn member(mu: f64) -> GaussianSummary {
    GaussianSummary::new(vec![mu, -mu], vec![1.0, 1.0]).expect("valid summary")
}

pub fn run_example() -> layerscope::Result<()> {
    let cfg = DivergenceConfig::default();
    let key = CellKey {
        layer: 12,
        timestep: 500,
        projection: Projection::Key,
    };

    // Three styles, two images each. Tight clusters far apart score low.
    let clustered = CellView::from_clusters(
        key,
        vec![
            vec![member(0.0), member(0.1)],
            vec![member(3.0), member(3.1)],
            vec![member(-3.0), member(-3.1)],
        ],
    );
    let d_in = inner_distance(&clustered, &cfg)?;
    let d_out = outer_distance(&clustered, &cfg)?;
    let score = clustering_score(&clustered, &cfg)?;
    println!("clustered cell: d_in={d_in:.5} d_out={d_out:.5} g={:.5}", score.g.unwrap_or(f64::NAN));

    // Same members, shuffled across styles: the style signal is gone.
    let mixed = CellView::from_clusters(
        key,
        vec![
            vec![member(0.0), member(3.1)],
            vec![member(3.0), member(-3.1)],
            vec![member(-3.0), member(0.1)],
        ],
    );
    let mixed_score = clustering_score(&mixed, &cfg)?;
    println!("mixed cell:     g={:.5}", mixed_score.g.unwrap_or(f64::NAN));
    assert!(score.g < mixed_score.g);

    // Every member identical: no information either way.
    let flat = CellView::from_clusters(key, vec![vec![member(1.0); 2]; 3]);
    let flat_score = clustering_score(&flat, &cfg)?;
    println!("identical cell: g={:?} flag={:?}", flat_score.g, flat_score.flag);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
