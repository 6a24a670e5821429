mod common;

use std::collections::BTreeMap;

use common::*;
use tweakscale_core::modification::resolve;
use tweakscale_core::pairwise::{check_necessity_p, compute_pairwise, generate_target_p, pairwise_error, repair_target_p, PairwiseViolation};
use tweakscale_core::synth::{random_dataset, random_schema, random_sizes};
use tweakscale_core::*;

fn bind() -> PairwiseBinding {
    pairwise_schema().pairwise_bindings[0].clone()
}

fn dist(pairs: &[((u32, u32), u64)], zero_pairs: u64, selfs: &[(u32, u64)], zero_self: u64) -> PairwiseDistribution {
    PairwiseDistribution {
        binding: bind(),
        rho_n: pairs.iter().copied().collect(),
        zero_pairs: Some(zero_pairs),
        rho_s: selfs.iter().copied().collect(),
        zero_self: Some(zero_self),
    }
}

fn users(n: i64) -> Vec<(i64, Vec<i64>)> {
    (1..=n).map(|i| (i, vec![])).collect()
}

#[test]
fn figure_distribution() {
    let ds = pairwise_figure();
    let rho = compute_pairwise(&ds, &bind()).unwrap();
    assert_eq!(rho.n(2, 4), 1);
    assert_eq!(rho.n(4, 2), 1);
    assert_eq!(rho.zero_pairs, Some(0));
    assert_eq!(rho.zero_self, Some(2));
    let (n, s) = oracle_pairwise(&ds, &bind());
    assert_eq!(n, BTreeMap::from([((2, 4), 1), ((4, 2), 1)]));
    assert_eq!(s, BTreeMap::from([(0, 2)]));
}

#[test]
fn no_responses_puts_all_mass_on_zero() {
    let ds = dataset(pairwise_schema(), &[("users", users(4)), ("post", vec![(1, vec![1])])]);
    let rho = compute_pairwise(&ds, &bind()).unwrap();
    assert!(rho.rho_n.is_empty() && rho.rho_s.is_empty());
    assert_eq!(rho.zero_pairs, Some(12));
    assert_eq!(rho.zero_self, Some(4));
}

#[test]
fn matches_user_pair_oracle() {
    for seed in 0..30 {
        let schema = random_schema(seed, 0);
        let ds = random_dataset(&schema, &random_sizes(&schema, seed, 2, 40), seed, 1.0);
        let b = &schema.pairwise_bindings[0];
        let rho = compute_pairwise(&ds, b).unwrap();
        let (mut n, mut s) = oracle_pairwise(&ds, b);
        assert_eq!(n.remove(&(0, 0)).unwrap_or(0), rho.zero_pairs.unwrap(), "seed {seed}");
        assert_eq!(s.remove(&0).unwrap_or(0), rho.zero_self.unwrap(), "seed {seed}");
        assert_eq!(n, rho.rho_n, "seed {seed}");
        assert_eq!(s, rho.rho_s, "seed {seed}");
    }
}

#[test]
fn necessity() {
    let ds = pairwise_figure();
    let sizes = ds.sizes();
    assert!(check_necessity_p(&compute_pairwise(&ds, &bind()).unwrap(), &sizes).is_empty());

    let asym = dist(&[((2, 4), 1), ((4, 3), 1)], 0, &[], 2);
    assert!(check_necessity_p(&asym, &sizes).contains(&PairwiseViolation::P1 { x: 2, y: 4 }));

    let p3 = dist(&[((2, 4), 1), ((4, 2), 1)], 3, &[], 2);
    assert_eq!(check_necessity_p(&p3, &sizes), vec![PairwiseViolation::P3 { mass: 5, pairs: 2 }]);

    let odd = dist(&[((3, 3), 1)], 1, &[], 2);
    assert!(check_necessity_p(&odd, &sizes).contains(&PairwiseViolation::P1Parity { x: 3 }));
}

#[test]
fn repair() {
    let ds = pairwise_figure();
    let sizes = ds.sizes();
    let valid = compute_pairwise(&ds, &bind()).unwrap();
    assert_eq!(repair_target_p(&valid, &sizes).unwrap(), valid);

    let p3 = dist(&[((2, 4), 1), ((4, 2), 1)], 3, &[], 2);
    let fixed = repair_target_p(&p3, &sizes).unwrap();
    assert_eq!(fixed.rho_n, p3.rho_n);
    assert_eq!(fixed.rho_s, p3.rho_s);
    assert_eq!(fixed.zero_pairs, Some(0));

    let raw = dist(&[((9, 1), 4), ((0, 5), 1), ((3, 3), 3)], 0, &[(7, 2)], 0);
    let fixed = repair_target_p(&raw, &sizes).unwrap();
    assert!(check_necessity_p(&fixed, &sizes).is_empty(), "{fixed:?}");
}

#[test]
fn generation_passes_the_checks() {
    let ds = pairwise_figure();
    let rho = compute_pairwise(&ds, &bind()).unwrap();
    assert_eq!(generate_target_p(&rho, &ds.sizes(), &ds.sizes()).unwrap(), rho);
    let big: TableSizes = ds.sizes().into_iter().map(|(k, v)| (k, v * 5)).collect();
    assert!(check_necessity_p(&generate_target_p(&rho, &ds.sizes(), &big).unwrap(), &big).is_empty());
}

#[test]
fn error_formula() {
    let a = dist(&[((2, 4), 1), ((4, 2), 1)], 4, &[], 3);
    assert_eq!(pairwise_error(&a, &a).unwrap(), 0.0);

    let disjoint = dist(&[((1, 1), 2)], 4, &[], 3);
    assert!((pairwise_error(&disjoint, &a).unwrap() - 2.0 * 2.0 / 6.0).abs() < 1e-12);

    let moved = dist(&[((2, 3), 1), ((3, 2), 1)], 4, &[], 3);
    assert!((pairwise_error(&moved, &a).unwrap() - 4.0 / 6.0).abs() < 1e-12);
}

fn run_solo(ds: Dataset, target: PairwiseDistribution) -> (Coordinator, ToolRunSummary) {
    let mut coord = Coordinator::new(ds, CoordinatorConfig::default());
    let h = coord.register(Box::new(PairwiseTool::new(vec![target]).with_repair(false))).unwrap();
    let s = coord.run_tool(h).unwrap();
    (coord, s)
}

#[test]
fn target_equal_to_current_changes_nothing() {
    let ds = pairwise_figure();
    let rho = compute_pairwise(&ds, &bind()).unwrap();
    let (coord, s) = run_solo(ds, rho);
    assert_eq!(s.proposals, 0);
    assert!(coord.journal().is_empty());
}

#[test]
fn retargeting_a_pair_moves_two_responses() {
    // u1 answers u2 three times, u2 answers u1 once
    let ds = dataset(
        pairwise_schema(),
        &[
            ("users", users(3)),
            ("post", vec![(1, vec![1]), (2, vec![2]), (3, vec![3])]),
            ("response", vec![(1, vec![1, 2]), (2, vec![1, 2]), (3, vec![1, 2]), (4, vec![2, 1])]),
        ],
    );
    assert_eq!(compute_pairwise(&ds, &bind()).unwrap().n(3, 1), 1);
    let target = dist(&[((1, 1), 2), ((2, 0), 1), ((0, 2), 1)], 2, &[], 3);
    assert!(check_necessity_p(&target, &ds.sizes()).is_empty());
    let (coord, s) = run_solo(ds, target);
    assert_eq!(s.error_after, 0.0);
    let (n, _) = oracle_pairwise(coord.dataset(), &bind());
    assert_eq!(n, BTreeMap::from([((0, 0), 2), ((1, 1), 2), ((2, 0), 1), ((0, 2), 1)]));
    assert_eq!(coord.dataset().table_by_name("response").unwrap().len(), 4);
    let moved = coord.journal().iter().filter(|r| r.op == "InsertValues").count();
    assert_eq!(moved, 2);
}

#[test]
fn missing_post_is_appended_once() {
    // only u1 owns a post, yet the target has u2 receiving a response
    let ds = dataset(
        pairwise_schema(),
        &[("users", users(3)), ("post", vec![(1, vec![1])]), ("response", vec![(1, vec![2, 1]), (2, vec![2, 1])])],
    );
    let target = dist(&[((1, 1), 2)], 4, &[], 3);
    assert!(check_necessity_p(&target, &ds.sizes()).is_empty());
    let (coord, s) = run_solo(ds, target);
    assert_eq!(s.error_after, 0.0);
    assert_eq!(s.appended.get("post"), Some(&1));
    assert_eq!(coord.journal().iter().filter(|r| r.op == "AppendTuple").count(), 1);
    assert!(coord.dataset().validate_integrity().is_clean());
}

#[test]
fn incremental_state_follows_edits() {
    let ds = pairwise_figure();
    let mut tool = PairwiseTool::new(vec![compute_pairwise(&ds, &bind()).unwrap()]);
    tool.calculate(&ds);
    let check = |tool: &mut PairwiseTool, ds: &mut Dataset, mods: &[Modification]| {
        let cs = resolve(ds, mods).unwrap();
        cs.apply_to(ds);
        tool.state().apply_all(&cs);
        assert_eq!(tool.snapshot(), tool.fresh_snapshot(ds));
        assert_eq!(tool.error(), tool.fresh_error(ds));
    };
    let mut ds = ds;
    // re-target one response
    check(&mut tool, &mut ds, &Modification::move_cells(2, 1, vec![1], vec![Cell::Int(1)]));
    // hand a post to the other user
    check(&mut tool, &mut ds, &[Modification::replace_one(1, 2, 0, Cell::Int(2))]);
    // a new user and a post of theirs
    check(&mut tool, &mut ds, &[Modification::AppendTuple { table: 0, values: vec![] }, Modification::AppendTuple { table: 1, values: vec![Cell::Int(3)] }]);
}

#[test]
fn interacting_pairs_on_figure() {
    assert_eq!(compute_pairwise(&pairwise_figure(), &bind()).unwrap().interacting_pairs(), 1);
}
