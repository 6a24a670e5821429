//! End to end: scale, build targets, run the tools in order for a number of
//! iterations, measure and write everything out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coappear::CoappearTool;
use crate::coordinator::{CoordEvent, Coordinator, CoordinatorConfig, RelaxationOrder, ToolHandle};
use crate::dataset::Dataset;
use crate::error::{DataError, Error};
use crate::feature::{FeatureSnapshot, TweakingTool};
use crate::linear::LinearTool;
use crate::metrics::{feature_error_report, query_report, read_queries, ErrorReport};
use crate::modification::write_journal;
use crate::pairwise::PairwiseTool;
use crate::scaler::{rand_scale, read_sizes, TableSizes};
use crate::schema::DatasetSchema;
use crate::targets::{generate_targets, TargetSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ToolKind {
    Linear,
    Coappear,
    Pairwise,
}

impl ToolKind {
    pub fn letter(self) -> char {
        match self {
            ToolKind::Linear => 'L',
            ToolKind::Coappear => 'C',
            ToolKind::Pairwise => 'P',
        }
    }

    pub fn tool_name(self) -> &'static str {
        match self {
            ToolKind::Linear => "linear",
            ToolKind::Coappear => "coappear",
            ToolKind::Pairwise => "pairwise",
        }
    }
}

/// Parses an order such as `C-L-P`. Each tool may appear once.
pub fn parse_order(order: &str) -> Result<Vec<ToolKind>, Error> {
    let mut out = Vec::new();
    for part in order.split(['-', ',']).map(str::trim).filter(|p| !p.is_empty()) {
        let kind = match part.to_ascii_uppercase().as_str() {
            "L" | "LINEAR" => ToolKind::Linear,
            "C" | "COAPPEAR" => ToolKind::Coappear,
            "P" | "PAIRWISE" => ToolKind::Pairwise,
            _ => return Err(Error::Config(format!("unknown tool `{part}` in order `{order}`"))),
        };
        if out.contains(&kind) {
            return Err(Error::Config(format!("tool `{part}` appears twice in order `{order}`")));
        }
        out.push(kind);
    }
    if out.is_empty() {
        return Err(Error::Config("order names no tool".into()));
    }
    Ok(out)
}

/// All orderings of `tools`, in lexicographic order of their letters.
pub fn permutations(tools: &[ToolKind]) -> Vec<Vec<ToolKind>> {
    let mut items = tools.to_vec();
    items.sort();
    let mut out = Vec::new();
    permute(&mut items, 0, &mut out);
    out.sort_by_key(|p| p.iter().map(|k| k.letter()).collect::<String>());
    out
}

fn permute(items: &mut Vec<ToolKind>, at: usize, out: &mut Vec<Vec<ToolKind>>) {
    if at == items.len() {
        out.push(items.clone());
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permute(items, at + 1, out);
        items.swap(at, i);
    }
}

pub fn order_string(order: &[ToolKind]) -> String {
    order.iter().map(|k| k.letter().to_string()).collect::<Vec<_>>().join("-")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct PipelineConfig {
    pub schema_path: PathBuf,
    pub data_dir: PathBuf,
    /// Table sizes to scale to; the input sizes when absent.
    pub size_target_path: Option<PathBuf>,
    pub order: String,
    pub iterations: usize,
    pub seed: u64,
    pub e_threshold: f64,
    /// Explicit target files, each overriding the generated targets of the
    /// feature kinds it contains.
    pub targets: Vec<PathBuf>,
    pub ground_truth_dir: Option<PathBuf>,
    /// JSON array of queries evaluated against the ground truth.
    pub queries_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Write the dataset after every iteration.
    pub snapshots: bool,
    pub allow_repair: bool,
    pub self_responses: bool,
    pub relaxation_order: RelaxationOrder,
    pub max_relaxation_rounds: usize,
    pub max_candidates: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let c = CoordinatorConfig::default();
        PipelineConfig {
            schema_path: PathBuf::from("schema.json"),
            data_dir: PathBuf::from("data"),
            size_target_path: None,
            order: "L-C-P".into(),
            iterations: 1,
            seed: 0,
            e_threshold: c.e_threshold,
            targets: Vec::new(),
            ground_truth_dir: None,
            queries_path: None,
            output_dir: PathBuf::from("out"),
            snapshots: false,
            allow_repair: true,
            self_responses: true,
            relaxation_order: c.relaxation_order,
            max_relaxation_rounds: c.max_relaxation_rounds,
            max_candidates: c.max_candidates,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<Vec<ToolKind>, Error> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.e_threshold.is_nan() || self.e_threshold < 0.0 {
            return Err(Error::Config("eThreshold must be non-negative".into()));
        }
        parse_order(&self.order)
    }

    pub fn coordinator_config(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            e_threshold: self.e_threshold,
            relaxation_order: self.relaxation_order,
            max_relaxation_rounds: self.max_relaxation_rounds,
            max_candidates: self.max_candidates,
            seed: self.seed,
            cross_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationErrors {
    pub iteration: usize,
    /// Tool name -> feature error after the iteration.
    pub errors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineReport {
    pub order: String,
    pub seed: u64,
    pub sizes: TableSizes,
    pub target_repairs: Vec<String>,
    pub iterations: Vec<IterationErrors>,
    pub events: Vec<CoordEvent>,
    #[serde(rename = "final")]
    pub final_errors: ErrorReport,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a run produced, before anything is written.
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub scaled: Dataset,
    pub dataset: Dataset,
    pub targets: TargetSet,
    pub journal: Vec<crate::modification::JournalRecord>,
    pub snapshots: Vec<Dataset>,
    pub feature_snapshots: BTreeMap<String, FeatureSnapshot>,
}

/// Registers one tool per kind in `order`, named after its kind.
pub fn build_tools(
    coord: &mut Coordinator,
    order: &[ToolKind],
    targets: &TargetSet,
    allow_repair: bool,
    self_responses: bool,
) -> Result<Vec<ToolHandle>, Error> {
    let mut handles = Vec::new();
    for &kind in order {
        let tool: Box<dyn TweakingTool> = match kind {
            ToolKind::Linear => Box::new(LinearTool::new(coord.dataset().schema(), targets.linear.clone())?.with_repair(allow_repair)),
            ToolKind::Coappear => Box::new(CoappearTool::new(targets.coappear.clone()).with_repair(allow_repair)),
            ToolKind::Pairwise => Box::new(
                PairwiseTool::new(targets.pairwise.clone()).with_repair(allow_repair).with_self_responses(self_responses),
            ),
        };
        handles.push(coord.register(tool)?);
    }
    Ok(handles)
}

#[derive(Debug, Clone)]
pub struct TweakOptions {
    pub order: Vec<ToolKind>,
    pub iterations: usize,
    pub config: CoordinatorConfig,
    pub allow_repair: bool,
    pub self_responses: bool,
    pub keep_snapshots: bool,
}

impl PipelineConfig {
    pub fn tweak_options(&self) -> Result<TweakOptions, Error> {
        Ok(TweakOptions {
            order: self.validate()?,
            iterations: self.iterations,
            config: self.coordinator_config(),
            allow_repair: self.allow_repair,
            self_responses: self.self_responses,
            keep_snapshots: self.snapshots,
        })
    }
}

/// Runs the tools over an already scaled dataset.
pub fn tweak_dataset(scaled: Dataset, targets: &TargetSet, opts: &TweakOptions) -> Result<(Coordinator, Vec<IterationErrors>, Vec<Dataset>), Error> {
    let mut coord = Coordinator::new(scaled, opts.config.clone());
    let handles = build_tools(&mut coord, &opts.order, targets, opts.allow_repair, opts.self_responses)?;
    let mut iters = Vec::new();
    let mut snaps = Vec::new();
    for it in 0..opts.iterations {
        for &h in &handles {
            coord.run_tool(h)?;
        }
        let errors = handles.iter().map(|&h| (coord.tool(h).name().to_string(), coord.tool(h).fresh_error(coord.dataset()))).collect();
        iters.push(IterationErrors { iteration: it + 1, errors });
        if opts.keep_snapshots {
            snaps.push(coord.dataset().clone());
        }
    }
    Ok((coord, iters, snaps))
}

pub fn run_pipeline_in_memory(cfg: &PipelineConfig) -> Result<PipelineOutcome, Error> {
    cfg.validate()?;
    let schema = DatasetSchema::load(&cfg.schema_path)?;
    let source = Dataset::load(&schema, &cfg.data_dir)?;
    let sizes = match &cfg.size_target_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| DataError::io(p, e))?;
            read_sizes(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => source.sizes(),
    };
    let scaled = rand_scale(&source, &sizes, cfg.seed)?;
    tweak_in_memory(cfg, &source, scaled)
}

/// The pipeline after scaling: `scaled` is tweaked as given, and default
/// targets are the features of `source` scaled to the sizes of `scaled`.
pub fn tweak_in_memory(cfg: &PipelineConfig, source: &Dataset, scaled: Dataset) -> Result<PipelineOutcome, Error> {
    let opts = cfg.tweak_options()?;
    let schema = scaled.schema().clone();
    let sizes = scaled.sizes();
    let mut targets = generate_targets(source, &sizes)?;
    for p in &cfg.targets {
        targets.override_with(TargetSet::load(p)?);
    }
    let mut target_repairs = Vec::new();
    if cfg.allow_repair {
        let (fixed, notes) = targets.repaired(&sizes)?;
        targets = fixed;
        target_repairs = notes;
    }

    let (coord, iterations, snapshots) = tweak_dataset(scaled.clone(), &targets, &opts)?;

    let mut final_errors = feature_error_report(coord.dataset(), &targets)?;
    final_errors.runs = coord.runs().to_vec();
    if let (Some(gt), Some(qp)) = (&cfg.ground_truth_dir, &cfg.queries_path) {
        let truth = Dataset::load(&schema, gt)?;
        let text = fs::read_to_string(qp).map_err(|e| DataError::io(qp, e))?;
        let queries = read_queries(&text).map_err(|e| Error::Config(format!("{}: {e}", qp.display())))?;
        final_errors.queries = query_report(&truth, coord.dataset(), &queries)?;
    }
    let feature_snapshots = coord
        .tool_names()
        .into_iter()
        .map(|n| {
            let h = coord.handle(&n).expect("registered");
            (n, coord.tool(h).snapshot())
        })
        .collect();
    let report = PipelineReport {
        order: order_string(&opts.order),
        seed: cfg.seed,
        sizes,
        target_repairs,
        iterations,
        events: coord.events().to_vec(),
        final_errors,
    };
    let journal = coord.journal().to_vec();
    Ok(PipelineOutcome { report, scaled, dataset: coord.into_dataset(), targets, journal, snapshots, feature_snapshots })
}

/// Writes `data/`, `scaled/`, `report.json`, `targets.json`,
/// `journal.ndjson` and, when kept, `iterations/<n>/` under `dir`.
pub fn write_outcome(outcome: &PipelineOutcome, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    outcome.dataset.write(&dir.join("data"))?;
    outcome.scaled.write(&dir.join("scaled"))?;
    for (i, snap) in outcome.snapshots.iter().enumerate() {
        snap.write(&dir.join("iterations").join((i + 1).to_string()))?;
    }
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| DataError::io(&p, e))
    };
    write("report.json", outcome.report.to_json())?;
    write("targets.json", outcome.targets.to_json())?;
    let p = dir.join("journal.ndjson");
    let file = fs::File::create(&p).map_err(|e| DataError::io(&p, e))?;
    write_journal(&outcome.journal, std::io::BufWriter::new(file)).map_err(|e| DataError::io(&p, e))?;
    Ok(())
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, Error> {
    let outcome = run_pipeline_in_memory(cfg)?;
    write_outcome(&outcome, &cfg.output_dir)?;
    Ok(outcome.report)
}
