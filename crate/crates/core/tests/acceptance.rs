//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use tweakscale_core::coappear::{check_necessity_c, compute_coappear, detect_coappear_groups};
use tweakscale_core::linear::{check_necessity_l, compute_linear_matrix, linear_error};
use tweakscale_core::metrics::feature_error_report;
use tweakscale_core::modification::{replay, resolve};
use tweakscale_core::pairwise::{check_necessity_p, compute_pairwise};
use tweakscale_core::pipeline::{permutations, run_pipeline, tweak_dataset, TweakOptions};
use tweakscale_core::rng::seeded;
use tweakscale_core::synth::{random_dataset, random_schema, random_sizes, social_schema};
use tweakscale_core::targets::generate_targets;
use tweakscale_core::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const ALL: [ToolKind; 3] = [ToolKind::Linear, ToolKind::Coappear, ToolKind::Pairwise];

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() < limit, || format!("took {:?}, limit {limit:?}", t.elapsed()))
}

fn social_sizes(scale: u64) -> TableSizes {
    [("U", 30), ("P", 60), ("R", 150), ("L", 90), ("S", 60), ("A", 80)].iter().map(|(k, v)| (k.to_string(), v * scale)).collect()
}

/// Source, its scaled copy and repaired targets at twice the size.
fn social_case(seed: u64) -> (Dataset, TargetSet) {
    let src = random_dataset(&social_schema(), &social_sizes(1), seed, 1.5);
    let big = social_sizes(2);
    let scaled = rand_scale(&src, &big, seed).unwrap();
    let (targets, _) = generate_targets(&src, &big).unwrap().repaired(&big).unwrap();
    (scaled, targets)
}

fn options(order: Vec<ToolKind>, iterations: usize, seed: u64) -> TweakOptions {
    TweakOptions {
        order,
        iterations,
        config: CoordinatorConfig { seed, ..Default::default() },
        allow_repair: true,
        self_responses: true,
        keep_snapshots: false,
    }
}

fn csv_bytes(ds: &Dataset, dir: &Path) -> BTreeMap<String, Vec<u8>> {
    ds.write(dir).unwrap();
    ds.schema().tables.iter().map(|t| (t.name.clone(), fs::read(dir.join(format!("{}.csv", t.name))).unwrap())).collect()
}

/// Conservation, byte-identical replay and referential integrity.
fn check_run(scaled: &Dataset, coord: &Coordinator) -> Result<(), String> {
    let cells = |op: &str| -> usize {
        coord.journal().iter().filter(|r| r.op == op).map(|r| r.tuple_ids.len() * r.col_indexes.len()).sum()
    };
    ensure(cells("DeleteValues") == cells("InsertValues"), || {
        format!("deleted {} cells, inserted {}", cells("DeleteValues"), cells("InsertValues"))
    })?;
    let mut replayed = scaled.clone();
    replay(&mut replayed, coord.journal()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let a = csv_bytes(&replayed, &dir.path().join("replayed"));
    let b = csv_bytes(coord.dataset(), &dir.path().join("final"));
    ensure(a == b, || "replayed journal differs from the final dataset".into())?;
    let report = coord.dataset().validate_integrity();
    ensure(report.is_clean(), || format!("integrity: {report:?}"))
}

fn c1_metric() -> Outcome {
    let t = Instant::now();
    let truth = LinearJoinMatrix::from_rows(&["A", "B", "C"], vec![vec![0], vec![4, 0], vec![3, 4, 0]]);
    let actual = LinearJoinMatrix::from_rows(&["A", "B", "C"], vec![vec![0], vec![5, 0], vec![2, 3, 0]]);
    let e = linear_error(&truth, &actual).map_err(|e| e.to_string())?;
    ensure((e - 5.0 / 18.0).abs() < 1e-12, || format!("got {e}"))?;
    within(t, Duration::from_secs(1))?;
    Ok(format!("{e}"))
}

fn c2_figures() -> Outcome {
    let t = Instant::now();
    let fig = linear_figure();
    let chain = enumerate_maximal_chains(fig.schema()).unwrap().remove(0);
    let h = compute_linear_matrix(&fig, &chain).h;
    ensure((h[1][0], h[2][0], h[3][1]) == (3, 2, 2), || format!("h21 h31 h42 = {} {} {}", h[1][0], h[2][0], h[3][1]))?;

    let fig = coappear_figure();
    let g = detect_coappear_groups(fig.schema()).remove(0);
    let xi = compute_coappear(&fig, &g).unwrap();
    ensure(xi.get(&[3, 3, 1]) == 1 && xi.get(&[1, 1, 2]) == 2, || format!("xi {:?}", xi.entries))?;

    let fig = pairwise_figure();
    let rho = compute_pairwise(&fig, &fig.schema().pairwise_bindings[0]).unwrap();
    ensure(rho.n(2, 4) == 1 && rho.n(4, 2) == 1, || format!("rho {:?}", rho.rho_n))?;
    within(t, Duration::from_secs(1))?;
    Ok("h21=3 h31=2 h42=2, xi(3,3,1)=1 xi(1,1,2)=2, rho(2,4)=rho(4,2)=1".into())
}

fn solo(ds: &Dataset, tool: Box<dyn TweakingTool>, seed: u64) -> Result<f64, String> {
    let mut coord = Coordinator::new(ds.clone(), CoordinatorConfig { seed, ..Default::default() });
    let h = coord.register(tool).map_err(|e| e.to_string())?;
    let s = coord.run_tool(h).map_err(|e| e.to_string())?;
    let fresh = coord.tool(h).fresh_error(coord.dataset());
    check_run(ds, &coord)?;
    Ok(s.error_after.max(fresh))
}

fn c3_sufficiency() -> Outcome {
    let t = Instant::now();
    let mut runs = 0;
    for seed in 0..100u64 {
        let schema = random_schema(seed, (seed % 3) as usize);
        let sizes = random_sizes(&schema, seed, 100, 10_000);
        let ds = random_dataset(&schema, &sizes, seed, (seed % 4) as f64 * 0.5);
        let other = random_dataset(&schema, &random_sizes(&schema, seed + 500, 100, 10_000), seed + 500, 2.0 - (seed % 4) as f64 * 0.5);
        let (targets, _) = generate_targets(&other, &sizes).unwrap().repaired(&sizes).map_err(|e| e.to_string())?;
        let mut tools: Vec<(String, Box<dyn TweakingTool>)> = Vec::new();
        for t in &targets.linear {
            tools.push((t.chain.join("->"), Box::new(LinearTool::new(&schema, vec![t.clone()]).unwrap().with_repair(false))));
        }
        if !targets.coappear.is_empty() {
            tools.push(("coappear".into(), Box::new(CoappearTool::new(targets.coappear.clone()).with_repair(false))));
        }
        tools.push(("pairwise".into(), Box::new(PairwiseTool::new(targets.pairwise.clone()).with_repair(false))));
        for (name, tool) in tools {
            let e = solo(&ds, tool, seed).map_err(|e| format!("seed {seed} {name}: {e}"))?;
            ensure(e == 0.0, || format!("seed {seed} {name}: error {e}"))?;
            runs += 1;
        }
    }
    within(t, Duration::from_secs(300))?;
    Ok(format!("{runs} solo runs at error 0 in {:.1?}", t.elapsed()))
}

fn c4_necessity() -> Outcome {
    let t = Instant::now();
    let mut checked = 0;
    for seed in 0..1000u64 {
        let schema = random_schema(seed, (seed % 4) as usize);
        let mut ds = random_dataset(&schema, &random_sizes(&schema, seed, 1, 80), seed, (seed % 5) as f64 * 0.5);
        let mut rng = seeded(seed, "acceptance-edits");
        for _ in 0..seed % 60 {
            let mods = random_edit(&ds, &mut rng);
            if !mods.is_empty() {
                resolve(&ds, &mods).map_err(|e| e.to_string())?.apply_to(&mut ds);
            }
        }
        let sizes = ds.sizes();
        for chain in enumerate_maximal_chains(&schema).unwrap() {
            let cs: Vec<u64> = chain.tables.iter().map(|t| sizes[t]).collect();
            let v = check_necessity_l(&compute_linear_matrix(&ds, &chain), &cs).unwrap();
            ensure(v.is_empty(), || format!("seed {seed} {chain}: {v:?}"))?;
            checked += 1;
        }
        for g in detect_coappear_groups(&schema) {
            let v = check_necessity_c(&compute_coappear(&ds, &g).unwrap(), &sizes);
            ensure(v.is_empty(), || format!("seed {seed} {g}: {v:?}"))?;
            checked += 1;
        }
        for b in &schema.pairwise_bindings {
            let v = check_necessity_p(&compute_pairwise(&ds, b).unwrap(), &sizes);
            ensure(v.is_empty(), || format!("seed {seed}: {v:?}"))?;
            checked += 1;
        }
    }
    within(t, Duration::from_secs(300))?;
    Ok(format!("{checked} features, no violations"))
}

fn c5_post_growth() -> Outcome {
    let mut total = 0;
    let mut runs = 0;
    for seed in 0..200u64 {
        let schema = random_schema(seed, 0);
        let mut sizes = random_sizes(&schema, seed, 5, 200);
        // few posts per user so that posts run out
        if seed % 2 == 0 {
            let u = sizes["U"];
            sizes.insert("P".into(), (u / 3).max(1));
        }
        let ds = random_dataset(&schema, &sizes, seed, 1.0);
        let other = random_dataset(&schema, &random_sizes(&schema, seed + 7, 5, 200), seed + 7, 0.5);
        let (targets, _) = generate_targets(&other, &sizes).unwrap().repaired(&sizes).map_err(|e| e.to_string())?;
        let mut coord = Coordinator::new(ds.clone(), CoordinatorConfig { seed, ..Default::default() });
        let h = coord.register(Box::new(PairwiseTool::new(targets.pairwise.clone()))).unwrap();
        let s = coord.run_tool(h).map_err(|e| format!("seed {seed}: {e}"))?;
        let appended = s.appended.get("P").copied().unwrap_or(0) as i64;
        let bound = sizes["U"] as i64 - sizes["P"] as i64;
        ensure(appended <= bound.max(0), || format!("seed {seed}: {appended} posts appended, bound {bound}"))?;
        let journal = coord.journal().iter().filter(|r| r.op == "AppendTuple").count() as i64;
        ensure(journal == appended, || format!("seed {seed}: journal shows {journal} appends, summary {appended}"))?;
        total += appended;
        runs += 1;
    }
    Ok(format!("{runs} runs, {total} posts appended, all within |U|-|P|"))
}

fn c6_iterations() -> Outcome {
    let t = Instant::now();
    let (scaled, targets) = social_case(11);
    let mut worst = 0.0f64;
    for order in permutations(&ALL) {
        let label: String = order.iter().map(|k| k.letter()).collect();
        let (coord, _, _) = tweak_dataset(scaled.clone(), &targets, &options(order, 3, 11)).map_err(|e| format!("{label}: {e}"))?;
        check_run(&scaled, &coord).map_err(|e| format!("{label}: {e}"))?;
        let r = feature_error_report(coord.dataset(), &targets).unwrap();
        for (name, m) in [("linear", r.linear_mean), ("coappear", r.coappear_mean), ("pairwise", r.pairwise_mean)] {
            let m = m.ok_or_else(|| format!("{label}: no {name} targets"))?;
            ensure(m <= 0.05, || format!("{label}: {name} mean error {m}"))?;
            worst = worst.max(m);
        }
    }
    within(t, Duration::from_secs(600))?;
    Ok(format!("worst mean error {worst:.4}"))
}

fn c7_order() -> Outcome {
    // feature -> (sum when first, runs, sum when last, runs)
    let mut acc: BTreeMap<&str, (f64, u32, f64, u32)> = BTreeMap::new();
    for seed in 100..120u64 {
        let (scaled, targets) = social_case(seed);
        for order in permutations(&ALL) {
            let (coord, _, _) = tweak_dataset(scaled.clone(), &targets, &options(order.clone(), 1, seed)).map_err(|e| format!("seed {seed}: {e}"))?;
            check_run(&scaled, &coord).map_err(|e| format!("seed {seed}: {e}"))?;
            let r = feature_error_report(coord.dataset(), &targets).unwrap();
            for (kind, m) in [(ToolKind::Linear, r.linear_mean), (ToolKind::Coappear, r.coappear_mean), (ToolKind::Pairwise, r.pairwise_mean)] {
                let m = m.unwrap_or(0.0);
                let e = acc.entry(kind.tool_name()).or_default();
                if order[0] == kind {
                    e.0 += m;
                    e.1 += 1;
                }
                if order[2] == kind {
                    e.2 += m;
                    e.3 += 1;
                }
            }
        }
    }
    let mut parts = Vec::new();
    for (name, (f, nf, l, nl)) in acc {
        let (first, last) = (f / nf as f64, l / nl as f64);
        ensure(last <= first, || format!("{name}: last {last:.5} > first {first:.5}"))?;
        parts.push(format!("{name} {first:.4}->{last:.4}"));
    }
    Ok(parts.join(", "))
}

fn c8_conservation() -> Outcome {
    // also checked on every run of criteria 3, 6 and 7
    let mut runs = 0;
    for seed in 0..10u64 {
        let schema = random_schema(seed, 2);
        let ds = random_dataset(&schema, &random_sizes(&schema, seed, 20, 300), seed, 0.5);
        let other = random_dataset(&schema, &random_sizes(&schema, seed + 3, 20, 300), seed + 3, 2.0);
        let targets = generate_targets(&other, &ds.sizes()).unwrap();
        for order in permutations(&ALL) {
            let (coord, _, _) = tweak_dataset(ds.clone(), &targets, &options(order, 2, seed)).map_err(|e| format!("seed {seed}: {e}"))?;
            check_run(&ds, &coord).map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(coord.dataset().empty_cell_count() == 0, || format!("seed {seed}: empty cells left"))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs conserve cells and replay byte for byte"))
}

fn c9_incremental() -> Outcome {
    let mut ds = random_dataset(&social_schema(), &social_sizes(1), 3, 1.0);
    let schema = ds.schema().clone();
    let linear = enumerate_maximal_chains(&schema).unwrap().iter().map(|c| compute_linear_matrix(&ds, c)).collect();
    let coappear = detect_coappear_groups(&schema).iter().map(|g| compute_coappear(&ds, g).unwrap()).collect();
    let pairwise = schema.pairwise_bindings.iter().map(|b| compute_pairwise(&ds, b).unwrap()).collect();
    let mut tools: Vec<Box<dyn TweakingTool>> =
        vec![Box::new(LinearTool::new(&schema, linear).unwrap()), Box::new(CoappearTool::new(coappear)), Box::new(PairwiseTool::new(pairwise))];
    for t in tools.iter_mut() {
        t.calculate(&ds);
    }
    let mut rng = seeded(3, "fuzz");
    let mut edits = 0;
    while edits < 10_000 {
        let mods = random_edit(&ds, &mut rng);
        if mods.is_empty() {
            continue;
        }
        let cs = resolve(&ds, &mods).map_err(|e| e.to_string())?;
        cs.apply_to(&mut ds);
        edits += 1;
        for t in tools.iter_mut() {
            t.state().apply_all(&cs);
            ensure(t.snapshot() == t.fresh_snapshot(&ds), || format!("{} diverged after edit {edits}", t.name()))?;
            ensure(t.error() == t.fresh_error(&ds), || format!("{} error diverged after edit {edits}", t.name()))?;
        }
    }
    Ok(format!("{edits} edits, no mismatches"))
}

fn c10_determinism() -> Outcome {
    let src = random_dataset(&social_schema(), &social_sizes(1), 5, 1.0);
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.json"), src.schema().to_json()).unwrap();
        src.write(&dir.path().join("input")).unwrap();
        fs::write(dir.path().join("sizes.json"), serde_json::to_string(&social_sizes(2)).unwrap()).unwrap();
        let cfg = PipelineConfig {
            schema_path: dir.path().join("schema.json"),
            data_dir: dir.path().join("input"),
            size_target_path: Some(dir.path().join("sizes.json")),
            output_dir: dir.path().join("out"),
            order: "P-L-C".into(),
            iterations: 2,
            seed: 5,
            ..Default::default()
        };
        run_pipeline(&cfg).map_err(|e| e.to_string())?;
        let out = dir.path().join("out");
        let mut files = BTreeMap::new();
        for f in ["report.json", "journal.ndjson", "targets.json"] {
            files.insert(f.to_string(), fs::read(out.join(f)).unwrap());
        }
        for t in &src.schema().tables {
            let f = format!("data/{}.csv", t.name);
            files.insert(f.clone(), fs::read(out.join(&f)).unwrap());
        }
        outputs.push(files);
    }
    let differ: Vec<&String> = outputs[0].iter().filter(|(k, v)| outputs[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    ensure(differ.is_empty(), || format!("differing outputs: {differ:?}"))?;
    Ok(format!("{} files identical", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("metric exactness", c1_metric),
        ("figure examples", c2_figures),
        ("solo sufficiency to zero", c3_sufficiency),
        ("necessity soundness", c4_necessity),
        ("post growth bound", c5_post_growth),
        ("iteration improvement", c6_iterations),
        ("order monotonicity", c7_order),
        ("conservation and journal replay", c8_conservation),
        ("incremental equals recompute", c9_incremental),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{:.2?}]", i + 1, t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{:.2?}]", i + 1, t.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
