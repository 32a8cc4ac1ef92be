// Turn a layer ranking into a conditioning plan and query per-layer masks.
//
// Run with `cargo run --example conditioning_plan`.

use layerscope::plan::{build_structure_plan, build_style_plan, mask_for, StructureKnobs};
use layerscope::{ConditioningPlan, LayerRanking, RankScope, SchedulerSpec};

pub fn run_example() -> layerscope::Result<()> {
    // A 70-layer ranking where lower layer ids happen to score lower.
    let scores = (0..70u32).map(|l| (l, Some(f64::from(l) / 70.0))).collect();
    let ranking = LayerRanking::from_scores(RankScope::TimeAveraged, scores);
    let scheduler = SchedulerSpec::new(1000, 0, 50)?;

    let style = build_style_plan(&ranking, 0.43, &scheduler, false, &[])?;
    let structure = build_structure_plan(
        0.15,
        &scheduler,
        StructureKnobs {
            lambda_down: 0.15,
            ..StructureKnobs::default()
        },
    )?;
    let plan = ConditioningPlan::new(70, "example", scheduler, style, structure)?;
    println!(
        "{} style layers, structure on Up blocks while t > {}",
        plan.style.layers.len(),
        plan.structure.up_cutoff_timestep
    );

    for (layer, t) in [(0, 900), (0, 800), (50, 900)] {
        let mask = mask_for(&plan, layer, t)?;
        println!(
            "layer {layer:>2} t={t}: style={} structure_up={} down_scale={}",
            mask.style_on, mask.structure_up_on, mask.down_scale
        );
    }

    let bytes = plan.to_bytes()?;
    assert_eq!(ConditioningPlan::from_slice(&bytes)?, plan);
    println!("plan file is {} bytes of JSON", bytes.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
