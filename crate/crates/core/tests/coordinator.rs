mod common;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use common::*;
use rand::Rng;
use tweakscale_core::coordinator::AccessLog;
use tweakscale_core::modification::Change;
use tweakscale_core::pipeline::{parse_order, tweak_dataset, TweakOptions};
use tweakscale_core::synth::{random_dataset, social_schema, table};
use tweakscale_core::targets::generate_targets;
use tweakscale_core::*;

/// gender 1 or 2, five of each.
fn customers() -> Dataset {
    let schema = DatasetSchema { tables: vec![table("C", &[], &[("gender", int_kind())])], pairwise_bindings: vec![] };
    dataset(schema, &[("C", (1..=10).map(|i| (i, vec![if i <= 5 { 1 } else { 2 }])).collect())])
}

struct Null;

impl FeatureState for Null {
    fn watches(&self, _: usize) -> bool {
        false
    }
    fn apply(&mut self, _: &Change) {}
    fn revert(&mut self, _: &Change) {}
    fn error(&self) -> f64 {
        0.0
    }
}

/// Proposes each batch in turn and records the verdicts.
struct Probe {
    batches: Vec<Vec<Modification>>,
    verdicts: Rc<RefCell<Vec<bool>>>,
    state: Null,
}

impl TweakingTool for Probe {
    fn name(&self) -> &str {
        "probe"
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Share
    }
    fn calculate(&mut self, _: &Dataset) {}
    fn state(&mut self) -> &mut dyn FeatureState {
        &mut self.state
    }
    fn error(&self) -> f64 {
        0.0
    }
    fn instance_errors(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
    fn prepare(&mut self, _: &Dataset) -> Result<Vec<String>, CoordError> {
        Ok(Vec::new())
    }
    fn tweak(&mut self, session: &mut Session<'_>) -> Result<(), CoordError> {
        for b in &self.batches {
            let v = session.propose(b)?;
            self.verdicts.borrow_mut().push(v.accepted);
        }
        Ok(())
    }
    fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot::Share(Vec::new())
    }
    fn fresh_snapshot(&self, _: &Dataset) -> FeatureSnapshot {
        FeatureSnapshot::Share(Vec::new())
    }
    fn fresh_error(&self, _: &Dataset) -> f64 {
        0.0
    }
}

#[test]
fn registration() {
    let mut coord = Coordinator::new(linear_figure(), CoordinatorConfig::default());
    let h = coord.register(Box::new(LinearTool::new(&chain_schema(), vec![]).unwrap())).unwrap();
    assert_eq!(h, ToolHandle(0));
    let again = coord.register(Box::new(LinearTool::new(&chain_schema(), vec![]).unwrap()));
    assert!(matches!(again, Err(CoordError::DuplicateToolName(n)) if n == "linear"));
}

#[test]
fn order_p_l_c_runs_in_that_order() {
    let schema = social_schema();
    let sizes: TableSizes = [("U", 20), ("P", 40), ("R", 80), ("L", 60), ("S", 30), ("A", 50)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let ds = random_dataset(&schema, &sizes, 1, 1.0);
    let targets = generate_targets(&ds, &sizes).unwrap();
    let opts = TweakOptions {
        order: parse_order("P-L-C").unwrap(),
        iterations: 1,
        config: CoordinatorConfig::default(),
        allow_repair: true,
        self_responses: true,
        keep_snapshots: false,
    };
    let (coord, _, _) = tweak_dataset(ds, &targets, &opts).unwrap();
    let ran: Vec<&str> = coord.runs().iter().map(|r| r.tool.as_str()).collect();
    assert_eq!(ran, vec!["pairwise", "linear", "coappear"]);
}

#[test]
fn first_tool_gets_everything_accepted() {
    let verdicts = Rc::new(RefCell::new(Vec::new()));
    let probe = Probe { batches: vec![vec![Modification::replace_one(0, 1, 0, Cell::Int(2))]], verdicts: verdicts.clone(), state: Null };
    let mut coord = Coordinator::new(customers(), CoordinatorConfig::default());
    let h = coord.register(Box::new(probe)).unwrap();
    coord.run_tool(h).unwrap();
    assert_eq!(*verdicts.borrow(), vec![true]);
}

#[test]
fn validator_rejects_the_breaking_tuple_only() {
    let mut coord = Coordinator::new(customers(), CoordinatorConfig::default());
    let men = coord.register(Box::new(ValueShareTool::new("men", "C", "gender", Cell::Int(1), 0.5))).unwrap();
    coord.run_tool(men).unwrap();
    assert_eq!(coord.tool(men).error(), 0.0);

    let verdicts = Rc::new(RefCell::new(Vec::new()));
    // t1 is a man, t2 is not
    let batches = vec![vec![Modification::replace_one(0, 1, 0, Cell::Int(3))], vec![Modification::replace_one(0, 6, 0, Cell::Int(3))]];
    let h = coord.register(Box::new(Probe { batches, verdicts: verdicts.clone(), state: Null })).unwrap();
    coord.run_tool(h).unwrap();
    assert_eq!(*verdicts.borrow(), vec![false, true]);
}

#[test]
fn stale_and_rejected_verdicts_cannot_be_applied() {
    struct Stale;
    impl TweakingTool for Stale {
        fn name(&self) -> &str {
            "stale"
        }
        fn kind(&self) -> FeatureKind {
            FeatureKind::Share
        }
        fn calculate(&mut self, _: &Dataset) {}
        fn state(&mut self) -> &mut dyn FeatureState {
            unreachable!()
        }
        fn error(&self) -> f64 {
            0.0
        }
        fn instance_errors(&self) -> Vec<(String, f64)> {
            Vec::new()
        }
        fn prepare(&mut self, _: &Dataset) -> Result<Vec<String>, CoordError> {
            Ok(Vec::new())
        }
        fn tweak(&mut self, s: &mut Session<'_>) -> Result<(), CoordError> {
            let mut null = Null;
            let a = s.propose(&[Modification::replace_one(0, 1, 0, Cell::Int(2))])?;
            let b = s.propose(&[Modification::replace_one(0, 2, 0, Cell::Int(2))])?;
            s.apply(&mut null, a)?;
            match s.apply(&mut null, b) {
                Err(CoordError::StaleVerdict { verdict: 0, current: 1 }) => Ok(()),
                other => panic!("expected a stale verdict, got {other:?}"),
            }
        }
        fn snapshot(&self) -> FeatureSnapshot {
            FeatureSnapshot::Share(Vec::new())
        }
        fn fresh_snapshot(&self, _: &Dataset) -> FeatureSnapshot {
            FeatureSnapshot::Share(Vec::new())
        }
        fn fresh_error(&self, _: &Dataset) -> f64 {
            0.0
        }
    }
    let mut coord = Coordinator::new(customers(), CoordinatorConfig::default());
    let h = coord.register(Box::new(Stale)).unwrap();
    coord.run_tool(h).unwrap();
    assert_eq!(coord.version(), 1);
}

#[test]
fn contradictory_shares_relax_the_earliest_feature() {
    let schema = DatasetSchema { tables: vec![table("C", &[], &[("gender", int_kind()), ("city", int_kind())])], pairwise_bindings: vec![] };
    let ds = dataset(schema, &[("C", (1..=10).map(|i| (i, vec![if i <= 5 { 1 } else { 2 }, 1])).collect())]);
    let mut coord = Coordinator::new(ds, CoordinatorConfig::default());
    let men = coord.register(Box::new(ValueShareTool::new("men", "C", "gender", Cell::Int(1), 0.6))).unwrap();
    let city = coord.register(Box::new(ValueShareTool::new("city", "C", "city", Cell::Int(1), 0.5))).unwrap();
    let women = coord.register(Box::new(ValueShareTool::new("women", "C", "gender", Cell::Int(2), 0.6))).unwrap();
    for h in [men, city, women] {
        coord.run_tool(h).unwrap();
    }
    let relaxed: Vec<_> = coord.events().iter().filter_map(|e| match e {
        CoordEvent::Relaxed { tool, feature } => Some((tool.as_str(), feature.as_str())),
        _ => None,
    }).collect();
    assert_eq!(relaxed, vec![("women", "men")]);
    assert_eq!(coord.tool(women).error(), 0.0);
    assert_eq!(coord.tool(city).error(), 0.0);
    assert!(coord.tool(men).error() > 0.05);
}

#[test]
fn latest_first_relaxes_the_other_end() {
    let schema = DatasetSchema { tables: vec![table("C", &[], &[("gender", int_kind())])], pairwise_bindings: vec![] };
    let ds = dataset(schema, &[("C", (1..=10).map(|i| (i, vec![if i <= 5 { 1 } else { 2 }])).collect())]);
    let cfg = CoordinatorConfig { relaxation_order: RelaxationOrder::LatestFirst, ..Default::default() };
    let mut coord = Coordinator::new(ds, cfg);
    let a = coord.register(Box::new(ValueShareTool::new("a", "C", "gender", Cell::Int(1), 0.55))).unwrap();
    let b = coord.register(Box::new(ValueShareTool::new("b", "C", "gender", Cell::Int(1), 0.5))).unwrap();
    let c = coord.register(Box::new(ValueShareTool::new("c", "C", "gender", Cell::Int(2), 0.7))).unwrap();
    for h in [a, b, c] {
        coord.run_tool(h).unwrap();
    }
    let relaxed: Vec<_> = coord.events().iter().filter_map(|e| match e {
        CoordEvent::Relaxed { feature, .. } => Some(feature.as_str()),
        _ => None,
    }).collect();
    assert_eq!(relaxed, vec!["b", "a"]);
}

#[test]
fn exhausted_budget_is_an_error() {
    let cfg = CoordinatorConfig { max_relaxation_rounds: 0, ..Default::default() };
    let mut coord = Coordinator::new(customers(), cfg);
    let men = coord.register(Box::new(ValueShareTool::new("men", "C", "gender", Cell::Int(1), 0.5))).unwrap();
    let women = coord.register(Box::new(ValueShareTool::new("women", "C", "gender", Cell::Int(2), 0.8))).unwrap();
    coord.run_tool(men).unwrap();
    assert!(matches!(coord.run_tool(women), Err(CoordError::CoordinatorExhausted { .. })));
}

#[test]
fn features_already_off_target_are_not_validated() {
    let mut coord = Coordinator::new(customers(), CoordinatorConfig::default());
    let men = coord.register(Box::new(ValueShareTool::new("men", "C", "gender", Cell::Int(1), 0.5))).unwrap();
    let women = coord.register(Box::new(ValueShareTool::new("women", "C", "gender", Cell::Int(2), 0.9))).unwrap();
    let again = coord.register(Box::new(ValueShareTool::new("again", "C", "gender", Cell::Int(2), 0.9))).unwrap();
    coord.run_tool(men).unwrap();
    coord.run_tool(women).unwrap();
    coord.run_tool(again).unwrap();
    assert!(coord.events().iter().any(|e| matches!(e, CoordEvent::PreRelaxed { tool, feature, .. } if tool == "again" && feature == "men")));
}

fn log(entries: &[(&str, &[(usize, i64)])]) -> AccessLog {
    entries.iter().map(|(t, v)| (t.to_string(), v.iter().copied().collect::<BTreeSet<_>>())).collect()
}

#[test]
fn overlap_graphs() {
    let g = OverlapGraph::from_access_log(&log(&[("a", &[(0, 1)]), ("b", &[(1, 1)]), ("c", &[(2, 5)])]));
    assert!(g.edges.is_empty());
    assert_eq!(g.max_independent_set().unwrap(), vec!["a", "b", "c"]);

    let g = OverlapGraph::from_access_log(&log(&[("linear", &[(2, 4), (1, 1)]), ("coappear", &[(2, 4)])]));
    assert!(g.has_edge("linear", "coappear"));

    let g = OverlapGraph::from_access_log(&log(&[("a", &[(0, 1), (0, 2)]), ("b", &[(0, 2), (0, 3)]), ("c", &[(0, 3), (0, 1)])]));
    assert_eq!(g.edges.len(), 3);
    assert_eq!(g.max_independent_set().unwrap(), vec!["a"]);
}

#[test]
fn overlap_from_journal() {
    let rec = |tool: &str, table: &str, ids: Vec<i64>| JournalRecord {
        op: "ReplaceValues".into(),
        table_id: table.into(),
        tuple_ids: ids,
        col_indexes: vec![0],
        values: vec![Cell::Int(1)],
        tool_name: tool.into(),
        step: 0,
    };
    let g = OverlapGraph::from_journal(&[rec("linear", "R", vec![1, 2]), rec("coappear", "R", vec![2]), rec("pairwise", "P", vec![2])]);
    assert_eq!(g.nodes, vec!["coappear", "linear", "pairwise"]);
    assert!(g.has_edge("linear", "coappear"));
    assert!(!g.has_edge("linear", "pairwise"));
    assert_eq!(g.max_independent_set().unwrap(), vec!["coappear", "pairwise"]);
}

#[test]
fn independent_set_matches_exhaustive_search() {
    let mut rng = tweakscale_core::rng::seeded(5, "graphs");
    let names: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    for _ in 0..50 {
        let mut edges = Vec::new();
        for a in 0..10 {
            for b in a + 1..10 {
                if rng.random_bool(0.3) {
                    edges.push((refs[a], refs[b]));
                }
            }
        }
        let g = OverlapGraph::from_edges(&refs, &edges);
        let mut best: Option<Vec<String>> = None;
        for mask in 0u32..1 << 10 {
            let ok = g.edges.iter().all(|&(a, b)| mask & (1 << a) == 0 || mask & (1 << b) == 0);
            if !ok {
                continue;
            }
            let set: Vec<String> = (0..10).filter(|i| mask & (1 << i) != 0).map(|i| g.nodes[i].clone()).collect();
            best = match best {
                Some(b) if b.len() > set.len() || (b.len() == set.len() && b <= set) => Some(b),
                _ => Some(set),
            };
        }
        assert_eq!(g.max_independent_set().unwrap(), best.unwrap());
    }
}

#[test]
fn three_tools_last_reaches_zero() {
    let schema = social_schema();
    let sizes: TableSizes = [("U", 30), ("P", 60), ("R", 150), ("L", 100), ("S", 50), ("A", 80)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let src = random_dataset(&schema, &sizes, 3, 1.5);
    let big: TableSizes = sizes.iter().map(|(k, v)| (k.clone(), v * 2)).collect();
    let targets = generate_targets(&src, &big).unwrap();
    let scaled = rand_scale(&src, &big, 3).unwrap();
    let opts = TweakOptions {
        order: parse_order("C-L-P").unwrap(),
        iterations: 1,
        config: CoordinatorConfig::default(),
        allow_repair: true,
        self_responses: true,
        keep_snapshots: false,
    };
    let (coord, iters, _) = tweak_dataset(scaled, &targets, &opts).unwrap();
    let errors: &BTreeMap<String, f64> = &iters[0].errors;
    assert_eq!(errors["pairwise"], 0.0);
    let relaxed: BTreeSet<String> = coord.runs().iter().flat_map(|r| r.relaxed.clone()).collect();
    let pre: BTreeSet<String> = coord
        .events()
        .iter()
        .filter_map(|e| match e {
            CoordEvent::PreRelaxed { feature, .. } => Some(feature.clone()),
            _ => None,
        })
        .collect();
    for f in ["coappear", "linear"] {
        assert!(errors[f] <= 0.05 || relaxed.contains(f) || pre.contains(f), "{f}: {}", errors[f]);
    }
}
