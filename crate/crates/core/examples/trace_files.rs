// Write a trace set to disk, read it back, and validate it.
//
// Run with `cargo run --example trace_files`.

use layerscope::synth::{generate_null, SynthConfig};
use layerscope::trace::{group_by_cell, read_traces, validate, write_traces};
use layerscope::Projection;

pub fn run_example() -> layerscope::Result<()> {
    let dir = std::env::temp_dir().join(format!("layerscope-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| layerscope::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join("traces.jsonl");

    let set = generate_null(&SynthConfig::new(2, 2, 3, vec![0, 999], 4, 1))?;
    write_traces(&set, &path)?;
    let back = read_traces(&path)?;
    assert_eq!(back, set);
    println!("{} records round-tripped through {}", back.records.len(), path.display());

    let report = validate(&back);
    println!("validation: {}", report.summary());

    let cell = group_by_cell(&back, 1, 999, Projection::Key)?;
    for cluster in &cell.clusters {
        println!("style {} has {} images", cluster.style_id, cluster.members.len());
    }

    // Drop one record and the grid is no longer complete.
    let mut partial = back.clone();
    partial.records.pop();
    let report = validate(&partial);
    assert!(!report.ok);
    println!("after dropping a record: {}", report.summary());

    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
