use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;
use tweakscale_core::error::{CoordError, Error, FeatureError, ScaleError};
use tweakscale_core::metrics::{feature_error_report, query_report, read_queries};
use tweakscale_core::modification::{read_journal, write_journal};
use tweakscale_core::pipeline::{order_string, permutations, run_pipeline_in_memory, tweak_in_memory, write_outcome, PipelineOutcome};
use tweakscale_core::scaler::read_sizes;
use tweakscale_core::{rand_scale, Dataset, DatasetSchema, OverlapGraph, PipelineConfig, TableSizes, TargetSet};

#[derive(Parser)]
#[command(name = "tweakscale", version, about = "Scale a relational dataset and tweak its inter-table features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scale the input tables to the sizes in --sizes.
    Scale(Opts),
    /// Tweak an already scaled dataset towards explicit --targets.
    Tweak(Opts),
    /// Report feature errors of --data against --targets.
    Measure(Opts),
    /// Scale, generate targets and tweak in one go.
    Run(Opts),
    /// Which tools of a finished run touched common tuples.
    AnalyzeOverlap(Opts),
    /// Check --targets against the necessary conditions.
    ValidateTarget(Opts),
    /// `run` once per permutation of --order, each in its own process.
    Sweep(Opts),
}

#[derive(Args, Clone, Default)]
struct Opts {
    /// TOML or JSON file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Directory of <table>.csv files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON object of table name to size.
    #[arg(long)]
    sizes: Option<PathBuf>,
    /// Tool order such as C-L-P.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    e_threshold: Option<f64>,
    /// Target file; may be repeated.
    #[arg(long)]
    targets: Vec<PathBuf>,
    /// Directory with the real dataset at the target sizes.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// JSON array of queries to compare against the ground truth.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Journal to write (run, tweak) or read (analyze-overlap).
    #[arg(long)]
    journal: Option<PathBuf>,
    /// Keep the dataset after every iteration.
    #[arg(long)]
    snapshots: bool,
    /// Fail instead of repairing infeasible targets.
    #[arg(long)]
    no_repair: bool,
    /// validate-target: write repaired targets to --out.
    #[arg(long)]
    repair: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("targets are infeasible: {}", .0.join("; "))]
    Infeasible(Vec<String>),
    #[error("{failed} of {total} permutation run(s) failed")]
    Sweep { failed: usize, total: usize, code: u8 },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Infeasible(_) => 3,
            CliError::Sweep { code, .. } => *code,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Data(_) => 2,
                Error::Scale(ScaleError::InfeasibleTarget { .. }) => 3,
                Error::Scale(_) => 2,
                Error::Feature(FeatureError::InfeasibleRepair(_)) => 3,
                Error::Coord(CoordError::TargetInfeasible { .. }) | Error::Coord(CoordError::Feature(FeatureError::InfeasibleRepair(_))) => 3,
                Error::Coord(CoordError::CoordinatorExhausted { .. }) => 4,
                _ => 1,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Infeasible(_) => "infeasibleTarget",
            CliError::Sweep { .. } => "sweep",
            CliError::Core(e) => match e {
                Error::Config(_) => "config",
                Error::Data(_) => "data",
                Error::Modification(_) => "modification",
                Error::Feature(_) => "feature",
                Error::Scale(_) => "scale",
                Error::Overlap(_) => "overlap",
                Error::Coord(CoordError::TargetInfeasible { .. }) => "infeasibleTarget",
                Error::Coord(CoordError::CoordinatorExhausted { .. }) => "coordinatorExhausted",
                Error::Coord(_) => "coordinator",
            },
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io(path))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, text).map_err(io(path))
}

fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// The config file, if any, with flags layered on top.
fn config(o: &Opts) -> Result<PipelineConfig, CliError> {
    let mut c = match &o.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &o.schema {
        c.schema_path = v.clone();
    }
    if let Some(v) = &o.data {
        c.data_dir = v.clone();
    }
    if let Some(v) = &o.sizes {
        c.size_target_path = Some(v.clone());
    }
    if let Some(v) = &o.order {
        c.order = v.clone();
    }
    if let Some(v) = o.iterations {
        c.iterations = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.e_threshold {
        c.e_threshold = v;
    }
    if !o.targets.is_empty() {
        c.targets = o.targets.clone();
    }
    if let Some(v) = &o.ground_truth {
        c.ground_truth_dir = Some(v.clone());
    }
    if let Some(v) = &o.queries {
        c.queries_path = Some(v.clone());
    }
    if let Some(v) = &o.out {
        c.output_dir = v.clone();
    }
    c.snapshots |= o.snapshots;
    if o.no_repair {
        c.allow_repair = false;
    }
    Ok(c)
}

fn sizes_of(path: &Path) -> Result<TableSizes, CliError> {
    read_sizes(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_targets(paths: &[PathBuf]) -> Result<TargetSet, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("--targets is required".into()));
    }
    let mut set = TargetSet::default();
    for p in paths {
        set.override_with(TargetSet::load(p).map_err(Error::from)?);
    }
    Ok(set)
}

fn load_data(c: &PipelineConfig) -> Result<(DatasetSchema, Dataset), CliError> {
    let schema = DatasetSchema::load(&c.schema_path).map_err(Error::from)?;
    let ds = Dataset::load(&schema, &c.data_dir).map_err(Error::from)?;
    Ok((schema, ds))
}

fn scale(o: &Opts) -> Result<serde_json::Value, CliError> {
    let c = config(o)?;
    let path = c.size_target_path.clone().ok_or_else(|| CliError::Config("--sizes is required".into()))?;
    let (_, ds) = load_data(&c)?;
    let scaled = rand_scale(&ds, &sizes_of(&path)?, c.seed).map_err(Error::from)?;
    scaled.write(&c.output_dir).map_err(Error::from)?;
    Ok(json!({ "out": c.output_dir, "sizes": scaled.sizes() }))
}

fn finish(c: &PipelineConfig, outcome: PipelineOutcome, journal: Option<&Path>) -> Result<serde_json::Value, CliError> {
    write_outcome(&outcome, &c.output_dir).map_err(Error::from)?;
    if let Some(p) = journal {
        let mut buf = Vec::new();
        write_journal(&outcome.journal, &mut buf).map_err(io(p))?;
        write(p, &String::from_utf8(buf).expect("journal is utf-8"))?;
    }
    let f = &outcome.report.final_errors;
    Ok(json!({
        "out": c.output_dir,
        "order": outcome.report.order,
        "linearMean": f.linear_mean,
        "coappearMean": f.coappear_mean,
        "pairwiseMean": f.pairwise_mean,
        "journalRecords": outcome.journal.len(),
    }))
}

fn tweak(o: &Opts) -> Result<serde_json::Value, CliError> {
    let c = config(o)?;
    if c.targets.is_empty() {
        return Err(CliError::Config("tweak needs --targets".into()));
    }
    c.validate()?;
    let (_, ds) = load_data(&c)?;
    let outcome = tweak_in_memory(&c, &ds, ds.clone())?;
    finish(&c, outcome, o.journal.as_deref())
}

fn run(o: &Opts) -> Result<serde_json::Value, CliError> {
    let c = config(o)?;
    let outcome = run_pipeline_in_memory(&c)?;
    finish(&c, outcome, o.journal.as_deref())
}

fn measure(o: &Opts) -> Result<serde_json::Value, CliError> {
    let c = config(o)?;
    let (schema, ds) = load_data(&c)?;
    let targets = load_targets(&c.targets)?;
    let mut report = feature_error_report(&ds, &targets)?;
    if let (Some(gt), Some(qp)) = (&c.ground_truth_dir, &c.queries_path) {
        let truth = Dataset::load(&schema, gt).map_err(Error::from)?;
        let queries = read_queries(&read(qp)?).map_err(|e| CliError::Config(format!("{}: {e}", qp.display())))?;
        report.queries = query_report(&truth, &ds, &queries).map_err(Error::from)?;
    }
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn analyze_overlap(o: &Opts) -> Result<serde_json::Value, CliError> {
    let path = match (&o.journal, &o.out) {
        (Some(j), _) => j.clone(),
        (None, Some(dir)) => dir.join("journal.ndjson"),
        (None, None) => return Err(CliError::Config("--journal is required".into())),
    };
    let file = fs::File::open(&path).map_err(io(&path))?;
    let records = read_journal(std::io::BufReader::new(file)).map_err(Error::from)?;
    let g = OverlapGraph::from_journal(&records);
    let set = g.max_independent_set().map_err(Error::from)?;
    let edges: Vec<[&str; 2]> = g.edges.iter().map(|&(a, b)| [g.nodes[a].as_str(), g.nodes[b].as_str()]).collect();
    Ok(json!({ "nodes": g.nodes, "edges": edges, "independentSet": set }))
}

fn validate_target(o: &Opts) -> Result<serde_json::Value, CliError> {
    let c = config(o)?;
    let targets = load_targets(&c.targets)?;
    let sizes = match &c.size_target_path {
        Some(p) => sizes_of(p)?,
        None => load_data(&c)?.1.sizes(),
    };
    let violations = targets.violations(&sizes)?;
    if o.repair {
        let out = o.out.as_ref().ok_or_else(|| CliError::Config("--repair needs --out".into()))?;
        let (fixed, notes) = targets.repaired(&sizes)?;
        write(&out.join("targets.json"), &fixed.to_json())?;
        return Ok(json!({ "violations": violations, "repaired": notes }));
    }
    if !violations.is_empty() {
        return Err(CliError::Infeasible(violations));
    }
    Ok(json!({ "violations": violations }))
}

fn sweep(o: &Opts) -> Result<serde_json::Value, CliError> {
    let c = config(o)?;
    let tools = c.validate()?;
    let exe = std::env::current_exe().map_err(io(Path::new("tweakscale")))?;
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut code = 0;
    let perms = permutations(&tools);
    for perm in &perms {
        let label = order_string(perm);
        let dir = c.output_dir.join(&label);
        let sub = PipelineConfig { order: label.clone(), output_dir: dir.clone(), ..c.clone() };
        let cfg_path = c.output_dir.join(format!("{label}.json"));
        write(&cfg_path, &serde_json::to_string_pretty(&sub).expect("config serializes"))?;
        let child = Process::new(&exe).arg("run").arg("--config").arg(&cfg_path).output().map_err(io(&exe))?;
        let exit = child.status.code().unwrap_or(1);
        let mut row = json!({ "order": label, "exitCode": exit });
        if child.status.success() {
            let report: serde_json::Value =
                serde_json::from_str(&read(&dir.join("report.json"))?).map_err(|e| CliError::Config(e.to_string()))?;
            for k in ["linearMean", "coappearMean", "pairwiseMean"] {
                row[k] = report["final"][k].clone();
            }
        } else {
            let err = String::from_utf8_lossy(&child.stderr);
            row["error"] = serde_json::from_str(err.trim()).unwrap_or_else(|_| json!(err.trim()));
            failed += 1;
            if code == 0 {
                code = exit.clamp(1, 255) as u8;
            }
        }
        rows.push(row);
    }
    let summary = json!({ "runs": rows });
    write(&c.output_dir.join("sweep.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    if failed > 0 {
        return Err(CliError::Sweep { failed, total: perms.len(), code });
    }
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Scale(o) => scale(o),
        Command::Tweak(o) => tweak(o),
        Command::Measure(o) => measure(o),
        Command::Run(o) => run(o),
        Command::AnalyzeOverlap(o) => analyze_overlap(o),
        Command::ValidateTarget(o) => validate_target(o),
        Command::Sweep(o) => sweep(o),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exitCode": code }));
            ExitCode::from(code)
        }
    }
}
