//! Acceptance gate: one pass/fail line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p layerscope --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{inner_brute, outer_brute, rel_err, trimmed_sort_oracle, FLOOR};
use layerscope::cli::run_with;
use layerscope::divergence::{jsd, kl_diag_gauss, kl_numeric_oracle, SimpsonGrid};
use layerscope::eval::{read_similarity, recovery_metrics, tradeoff_curve, Conditioning, CurveFilter, PromptClass};
use layerscope::plan::{build_structure_plan, build_style_plan, mask_for, up_cutoff, StructureKnobs};
use layerscope::ranking::{rank_layers, top_k_size, trimmed_aggregate, trimmed_mean};
use layerscope::scoring::{
    clustering_score, inner_distance, outer_distance, sensitivity_table, CellScore, ScoreProjection, TableHeader,
};
use layerscope::synth::{generate_null, generate_planted, GroundTruth, SynthConfig};
use layerscope::trace::TraceSet;
use layerscope::{
    ConditioningPlan, DivergenceConfig, LayerRanking, ProjectionPolicy, RankScope, SchedulerSpec, SensitivityTable,
};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn lib<T>(r: layerscope::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn kl_oracle_agreement() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(1);
    let cfg = DivergenceConfig::default();
    let grid = SimpsonGrid::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=8);
        let p = common::random_summary(&mut rng, d, (-5.0, 5.0), (0.1, 10.0));
        let q = common::random_summary(&mut rng, d, (-5.0, 5.0), (0.1, 10.0));
        let closed = lib(kl_diag_gauss(&p, &q, &cfg))?;
        let numeric = lib(kl_numeric_oracle(&p, &q, &grid))?;
        worst = worst.max(rel_err(closed, numeric));
    }
    let elapsed = start.elapsed();
    ensure!(worst < 1e-6, "max relative error {worst:e}");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("max rel err {worst:.2e} in {elapsed:.2?}"))
}

fn jsd_algebra() -> Outcome {
    let mut rng = common::rng(2);
    let cfg = DivergenceConfig::default();
    let mut worst_sym = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=16);
        let p = common::random_summary(&mut rng, d, (-5.0, 5.0), (0.1, 10.0));
        let q = common::random_summary(&mut rng, d, (-5.0, 5.0), (0.1, 10.0));
        let pq = lib(jsd(&p, &q, &cfg))?;
        let qp = lib(jsd(&q, &p, &cfg))?;
        worst_sym = worst_sym.max(rel_err(pq, qp));
        ensure!(pq >= -1e-12, "negative divergence {pq}");
        ensure!(pq > 0.0, "distinct summaries gave zero divergence");
        let pp = lib(jsd(&p, &p, &cfg))?;
        ensure!(pp == 0.0, "JSD(p, p) = {pp}");
    }
    ensure!(worst_sym <= 1e-12, "symmetry error {worst_sym:e}");
    Ok(format!("10000 pairs, max symmetry err {worst_sym:.2e}"))
}

fn brute_force_equivalence() -> Outcome {
    let mut rng = common::rng(3);
    let cfg = DivergenceConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (m, n, d) = (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(1..=4));
        let cell = common::random_cell(&mut rng, m, n, d);
        let (bi, bo) = (inner_brute(&cell, FLOOR), outer_brute(&cell, FLOOR));
        let score = lib(clustering_score(&cell, &cfg))?;
        let g = score.g.ok_or("unexpected degenerate cell")?;
        for err in [
            rel_err(lib(inner_distance(&cell, &cfg))?, bi),
            rel_err(lib(outer_distance(&cell, &cfg))?, bo),
            rel_err(g, bi / bo),
        ] {
            worst = worst.max(err);
        }
    }
    ensure!(worst <= 1e-10, "max relative error {worst:e}");
    Ok(format!("200 cells, max rel err {worst:.2e}"))
}

fn score_and_rank(set: &TraceSet) -> Result<LayerRanking, String> {
    let table = lib(sensitivity_table(set, &DivergenceConfig::default(), ProjectionPolicy::MeanOverProjections))?;
    lib(rank_layers(&table, RankScope::TimeAveraged))
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let timesteps: Vec<u32> = (0..10).map(|i| 999 - 111 * i).collect();
    let mut total = 0.0;
    let mut worst = 1.0f64;
    for seed in 0..20u64 {
        let mut layers: Vec<u32> = (0..70).collect();
        layers.shuffle(&mut common::rng(1000 + seed));
        let cfg = SynthConfig::new(10, 5, 70, timesteps.clone(), 32, seed).with_planted(layers[..30].to_vec(), 2.0);
        let (set, truth) = lib(generate_planted(&cfg))?;
        let ranking = score_and_rank(&set)?;
        let p = lib(recovery_metrics(&ranking, &truth, 30))?.precision_at_k;
        total += p;
        worst = worst.min(p);
    }
    let mean = total / 20.0;
    let elapsed = start.elapsed();
    ensure!(mean >= 0.95, "mean precision@30 {mean:.4}");
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("mean precision@30 {mean:.4} (worst seed {worst:.3}) in {elapsed:.2?}"))
}

fn null_calibration() -> Outcome {
    let mut positions: BTreeMap<u32, f64> = BTreeMap::new();
    for seed in 0..100u64 {
        let ranking = score_and_rank(&lib(generate_null(&SynthConfig::new(4, 3, 70, vec![0, 500], 8, seed)))?)?;
        for (layer, pos) in ranking.positions() {
            *positions.entry(layer).or_default() += pos as f64;
        }
    }
    let worst = positions
        .values()
        .map(|sum| (sum / 100.0 - 34.5).abs())
        .fold(0.0f64, f64::max);
    ensure!(positions.len() == 70, "ranked {} layers", positions.len());
    ensure!(worst <= 10.5, "a layer's mean rank is {worst:.2} from 34.5");
    Ok(format!("max |mean rank - 34.5| = {worst:.2}"))
}

fn operating_points() -> Outcome {
    let k70 = lib(top_k_size(0.43, 70))?;
    let k38 = lib(top_k_size(0.73, 38))?;
    let scheduler = lib(SchedulerSpec::new(1000, 0, 50))?;
    let cutoff = lib(up_cutoff(0.15, &scheduler))?;
    ensure!(k70 == 30, "K for 0.43 of 70 is {k70}");
    ensure!(k38 == 28, "K for 0.73 of 38 is {k38}");
    ensure!(cutoff == 850, "cutoff {cutoff}");

    let ranking = LayerRanking::from_scores(
        RankScope::TimeAveraged,
        (0..70u32).map(|l| (l, Some(f64::from(l)))).collect(),
    );
    let style = lib(build_style_plan(&ranking, 0.43, &scheduler, false, &[]))?;
    let structure = lib(build_structure_plan(0.15, &scheduler, StructureKnobs::default()))?;
    let plan = lib(ConditioningPlan::new(70, "", scheduler, style, structure))?;
    ensure!(plan.style.layers.len() == 30, "plan holds {} style layers", plan.style.layers.len());
    ensure!(lib(mask_for(&plan, 0, 900))?.structure_up_on, "structure off at t=900");
    ensure!(!lib(mask_for(&plan, 0, 800))?.structure_up_on, "structure on at t=800");
    Ok(format!("K=30, K=28, cutoff={cutoff}, mask on at 900 and off at 800"))
}

fn score_table(layers: u32, timesteps: &[u32], g: impl Fn(u32, u32) -> f64) -> SensitivityTable {
    let header = TableHeader {
        schema_version: 1,
        collection_ids: vec!["c".into()],
        layers,
        timesteps: timesteps.to_vec(),
        projections: vec![ScoreProjection::Mean],
        m: 2,
        n: 2,
    };
    let mut cells = Vec::new();
    for &t in timesteps {
        for l in 0..layers {
            let v = g(l, t);
            cells.push(CellScore {
                layer_id: l,
                timestep: t,
                projection: ScoreProjection::Mean,
                d_in: v,
                d_out: 1.0,
                g: Some(v),
                flag: None,
            });
        }
    }
    SensitivityTable::new(header, cells).expect("well-formed table")
}

fn trimmed_aggregation() -> Outcome {
    let mut rng = common::rng(7);
    let timesteps: Vec<u32> = (0..10).collect();
    let runs: Vec<Vec<f64>> = (0..5).map(|_| (0..1000).map(|_| rng.random_range(0.0..5.0)).collect()).collect();
    let tables: Vec<_> = runs
        .iter()
        .map(|vals| score_table(100, &timesteps, |l, t| vals[(t * 100 + l) as usize]))
        .collect();
    let merged = lib(trimmed_aggregate(&tables))?;
    let mut worst = 0.0f64;
    for idx in 0..1000u32 {
        let column: Vec<f64> = runs.iter().map(|r| r[idx as usize]).collect();
        let cell = merged
            .get(idx % 100, idx / 100, ScoreProjection::Mean)
            .ok_or("merged table lost a cell")?;
        worst = worst.max(rel_err(cell.g.ok_or("flagged cell")?, trimmed_sort_oracle(&column)));
    }
    ensure!(worst <= 1e-12, "max relative error {worst:e}");
    let example = trimmed_mean(&[1.0, 2.0, 3.0, 4.0, 100.0]);
    ensure!(example == Some(3.0), "[1,2,3,4,100] -> {example:?}");
    Ok(format!("1000 cells, max rel err {worst:.2e}; [1,2,3,4,100] -> 3"))
}

fn tables_match(a: &SensitivityTable, b: &SensitivityTable) -> Result<(), String> {
    ensure!(a.cells.len() == b.cells.len(), "cell counts differ");
    for ((key, x), (_, y)) in a.cells.iter().zip(&b.cells) {
        ensure!(x.flag == y.flag, "flag differs at {key:?}");
        for (u, v) in [(x.d_in, y.d_in), (x.d_out, y.d_out), (x.g.unwrap_or(0.0), y.g.unwrap_or(0.0))] {
            ensure!(rel_err(u, v) <= 1e-9, "value differs at {key:?}: {u} vs {v}");
        }
    }
    Ok(())
}

fn rankings_of(table: &SensitivityTable) -> Result<Vec<Vec<u32>>, String> {
    let mut out = vec![lib(rank_layers(table, RankScope::TimeAveraged))?.order];
    for &t in &table.header.timesteps {
        out.push(lib(rank_layers(table, RankScope::PerTimestep(t)))?.order);
    }
    Ok(out)
}

fn invariance_suite() -> Outcome {
    let cfg = DivergenceConfig::default();
    let policy = ProjectionPolicy::PerProjection;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut synth = SynthConfig::new(4, 3, 12, vec![0, 400, 800], 6, seed).with_planted([1, 4, 9], 1.0);
        synth.projections = layerscope::Projection::ALL.to_vec();
        synth.base_sigma = 0.5;
        let (base, _) = lib(generate_planted(&synth))?;
        let table = lib(sensitivity_table(&base, &cfg, policy))?;
        let orders = rankings_of(&table)?;

        let mut rng = common::rng(50 + seed);
        let shift: Vec<f64> = (0..synth.d).map(|_| rng.random_range(-20.0..20.0)).collect();
        let scale = rng.random_range(1.0..8.0);

        let mut translated = base.clone();
        for r in &mut translated.records {
            r.summary.mu.iter_mut().zip(&shift).for_each(|(m, s)| *m += s);
        }
        let mut scaled = base.clone();
        for r in &mut scaled.records {
            r.summary.mu.iter_mut().for_each(|m| *m *= scale);
            r.summary.sigma.iter_mut().for_each(|s| *s *= scale);
        }
        let mut relabeled = base.clone();
        for r in &mut relabeled.records {
            // reverses the sorted order of the style ids
            let idx: u32 = r.style_id.trim_start_matches("style").parse().map_err(|_| "unexpected style id")?;
            r.style_id = format!("z{}", 99 - idx);
        }
        let mut permuted = base.clone();
        permuted.records.shuffle(&mut rng);

        for (name, variant) in [
            ("translation", translated),
            ("scaling", scaled),
            ("relabeling", relabeled),
            ("permutation", permuted),
        ] {
            let other = lib(sensitivity_table(&variant, &cfg, policy))?;
            tables_match(&table, &other).map_err(|e| format!("{name}: {e}"))?;
            ensure!(rankings_of(&other)? == orders, "{name}: ranking order changed");
            checked += 1;
        }
    }
    Ok(format!("{checked} transformed sets, tables to 1e-9 and orders exact"))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["layerscope"];
    argv.extend_from_slice(args);
    match run_with(argv, &mut out, &mut err) {
        0 => Ok(()),
        code => Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err))),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let at = |name: &str| d.join(name).to_str().expect("utf-8 temp path").to_owned();

    let mut synth = SynthConfig::new(5, 4, 24, vec![0, 300, 600, 900], 16, 9).with_planted([0, 5, 17], 1.5);
    synth.projections = layerscope::Projection::ALL.to_vec();
    std::fs::write(d.join("cfg.json"), serde_json::to_vec(&synth).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    cli(&["synth", "--config", &at("cfg.json"), "-o", &at("traces.jsonl"), "--truth", &at("truth.json")])?;
    for policy in ["mean", "per-projection"] {
        cli(&["analyze", &at("traces.jsonl"), "-o", &at("t1.tbl"), "--threads", "1", "--projection-policy", policy])?;
        cli(&["analyze", &at("traces.jsonl"), "-o", &at("t8.tbl"), "--threads", "8", "--projection-policy", policy])?;
        ensure!(read(&d.join("t1.tbl"))? == read(&d.join("t8.tbl"))?, "{policy} tables differ across thread counts");
    }
    cli(&["rank", &at("t1.tbl"), "--averaged", "-o", &at("rank.tsv")])?;
    cli(&["rank", &at("t1.tbl"), "--timestep", "300", "--projection", "query", "-o", &at("rank300.tsv")])?;
    cli(&[
        "plan", "--ranking", &at("rank.tsv"), "--lambda-s", "0.43", "--lambda-t", "0.15", "--scheduler", "1000,0,50",
        "--timestep-ranking", &at("rank300.tsv"), "-o", &at("plan.json"),
    ])?;

    // Each file read back and written again must reproduce the same bytes.
    let traces = read(&d.join("traces.jsonl"))?;
    ensure!(lib(TraceSet::read_from(traces.as_slice()).and_then(|s| s.to_bytes()))? == traces, "trace file");
    let table = read(&d.join("t1.tbl"))?;
    ensure!(lib(SensitivityTable::read_from(table.as_slice()).and_then(|t| t.to_bytes()))? == table, "table file");
    for name in ["rank.tsv", "rank300.tsv"] {
        let bytes = read(&d.join(name))?;
        ensure!(lib(LayerRanking::read_from(bytes.as_slice()).and_then(|r| r.to_bytes()))? == bytes, "{name}");
    }
    let plan = read(&d.join("plan.json"))?;
    ensure!(lib(ConditioningPlan::from_slice(&plan).and_then(|p| p.to_bytes()))? == plan, "plan file");
    let truth = read(&d.join("truth.json"))?;
    let parsed: GroundTruth = serde_json::from_slice(&truth).map_err(|e| e.to_string())?;
    ensure!(parsed.to_bytes() == truth, "ground truth file");
    Ok("threads 1 and 8 byte-identical; traces, tables, rankings, plan, truth round-trip".into())
}

/// Group means straight from the CSV text, without the library's reader.
fn fixture_means(text: &str, keep: impl Fn(&[&str]) -> bool) -> BTreeMap<u32, (f64, f64, usize)> {
    let mut sums: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if !keep(&f) {
            continue;
        }
        let entry = sums.entry(f[2].parse().unwrap()).or_default();
        entry.0 += f[5].parse::<f64>().unwrap();
        entry.1 += f[6].parse::<f64>().unwrap();
        entry.2 += 1;
    }
    sums.into_iter()
        .map(|(k, (c, s, n))| (k, (c / n as f64, s / n as f64, n)))
        .collect()
}

fn eval_fixture() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/similarity.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let records = lib(read_similarity(&path))?;
    let mut worst = 0.0f64;
    let mut curves = 0;
    let conditionings = [None, Some(("text_only", Conditioning::TextOnly)), Some(("canny", Conditioning::Canny)), Some(("depth", Conditioning::Depth))];
    let prompts = [None, Some(("easy", PromptClass::Easy)), Some(("complex", PromptClass::Complex))];
    for method in ["balanced", "all_layers"] {
        for cond in conditionings {
            for prompt in prompts {
                let filter = CurveFilter {
                    method_tag: Some(method.into()),
                    conditioning: cond.map(|c| c.1),
                    prompt_class: prompt.map(|p| p.1),
                };
                let curve = lib(tradeoff_curve(&records, |r| filter.matches(r)))?;
                let expected = fixture_means(&text, |f| {
                    f[1] == method && cond.is_none_or(|c| f[3] == c.0) && prompt.is_none_or(|p| f[4] == p.0)
                });
                ensure!(curve.points.len() == expected.len(), "{method}: point count");
                for (p, (&k, &(c, s, n))) in curve.points.iter().zip(&expected) {
                    ensure!(p.k_layers == k && p.count == n, "{method}: k or count mismatch at {k}");
                    worst = worst.max(rel_err(p.mean_content, c)).max(rel_err(p.mean_style, s));
                }
                curves += 1;
            }
        }
    }
    ensure!(worst <= 1e-12, "curve mean error {worst:e}");

    let truth = GroundTruth {
        sensitive_layers: (0..30).collect(),
        separations: (0..30).map(|l| (l, 2.0)).collect(),
    };
    let mut rng = common::rng(10);
    let mut sum = 0.0;
    for _ in 0..1000 {
        let mut order: Vec<u32> = (0..70).collect();
        order.shuffle(&mut rng);
        let scores = order.iter().enumerate().map(|(pos, &l)| (l, Some(pos as f64))).collect();
        let ranking = LayerRanking::from_scores(RankScope::TimeAveraged, scores);
        sum += lib(recovery_metrics(&ranking, &truth, 30))?.precision_at_k;
    }
    let mean = sum / 1000.0;
    ensure!((mean - 30.0 / 70.0).abs() <= 0.03, "random precision {mean:.4}");
    Ok(format!("{curves} curves, max err {worst:.2e}; random precision@30 {mean:.4}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("KL oracle agreement", kl_oracle_agreement),
        ("JSD algebra", jsd_algebra),
        ("brute-force distance equivalence", brute_force_equivalence),
        ("planted recovery", planted_recovery),
        ("null calibration", null_calibration),
        ("operating points", operating_points),
        ("trimmed aggregation", trimmed_aggregation),
        ("invariance suite", invariance_suite),
        ("determinism and round-trips", determinism),
        ("eval fixture", eval_fixture),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
