//! Command-line front end: reproducible experiment runs with file-based
//! inputs and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use orasp::dro_solver::{ccg, DroError, MasterOptions};
use orasp::evaluation::{disappointment, mco, simulate, EvalError, Metric};
use orasp::instance::{build_catalog_instance, validate_instance, Instance, InstanceError};
use orasp::milp_adapter::{MilpError, SolveParams};
use orasp::model_core::{evaluate_recourse, schedule_table, ModelError, SbcOptions};
use orasp::scenario::{sample_in_sample, sample_out_of_sample, OosSetting, ScenarioError, ScenarioSet};
use orasp::sp_solver::{solve_sp_cvar, solve_sp_e, ModelTag, Risk, SolutionBundle, SolveError, SolveOptions};

pub const MANIFEST: &str = "manifest.json";
pub const INSTANCE: &str = "instance.json";
pub const SCENARIOS: &str = "scenarios.csv";
pub const SOLUTION: &str = "solution.json";
pub const SCHEDULE: &str = "schedule.csv";
pub const TRACE: &str = "trace.csv";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.csv";
pub const HISTOGRAM: &str = "histogram.csv";
pub const MCO: &str = "mco.csv";
pub const MCO_REPORT: &str = "mco.json";
pub const REPORT: &str = "report.csv";

/// Failure classes with their process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("infeasible or invalid: {0}")]
    Invalid(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::UnknownCatalog(_) | InstanceError::UnknownCostStructure(_) => CliError::Usage(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::EmptyRequest | ScenarioError::UnknownSetting(_) => CliError::Usage(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<MilpError> for CliError {
    fn from(e: MilpError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Instance(e) => e.into(),
            ModelError::Milp(e) => e.into(),
            ModelError::Backend(_) => CliError::Backend(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        if e.is_infeasible() {
            return CliError::Invalid(e.to_string());
        }
        match e {
            SolveError::Model(e) => e.into(),
            SolveError::Milp(e) => e.into(),
            SolveError::Instance(e) => e.into(),
            SolveError::Input(_) => CliError::Usage(e.to_string()),
            SolveError::Status { .. } => CliError::Backend(e.to_string()),
        }
    }
}

impl From<DroError> for CliError {
    fn from(e: DroError) -> Self {
        match e {
            DroError::Solve(e) => e.into(),
            DroError::Input(_) => CliError::Usage(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(e) => e.into(),
            EvalError::Solve(e) => e.into(),
            EvalError::Scenario(e) => e.into(),
            EvalError::Domain(_) | EvalError::TooLarge(_) => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "orasp", version, about = "Operating room and anesthesiologist scheduling under duration uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a catalog instance.
    Catalog {
        #[arg(long)]
        id: u32,
        #[arg(long, default_value_t = 1)]
        cost: u32,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Draw an in-sample or out-of-sample scenario set.
    Sample {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Out-of-sample setting (I, IIa..IIc, IIIa..IIIc, IV); in-sample when absent.
        #[arg(long)]
        setting: Option<String>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Solve one of the four models.
    Solve {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "sp-e")]
        model: String,
        #[arg(long, default_value_t = 0.95)]
        gamma: f64,
        /// Scenario file for SAA models; sampled from --n and --seed when absent.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Relative termination tolerance of the generation loop.
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 200)]
        max_iterations: usize,
        /// Time limit per master solve, seconds.
        #[arg(long, default_value_t = 600.0)]
        master_time_limit: f64,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Simulate a solution out of sample.
    Evaluate {
        #[command(flatten)]
        source: Source,
        /// Solution file; defaults to the one in the output directory.
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long, default_value = "I")]
        setting: String,
        #[arg(long, default_value_t = 1000)]
        nprime: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Monte-Carlo optimization gap estimate for the expected-cost model.
    Mco {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        nprime: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Tabulate evaluate runs: rows are settings, columns are models.
    Report {
        /// Output directories of evaluate runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

/// Where the instance comes from: a file, a catalog entry, or the output directory.
#[derive(Debug, Args)]
struct Source {
    #[arg(long, conflicts_with = "id")]
    instance: Option<PathBuf>,
    #[arg(long)]
    id: Option<u32>,
    #[arg(long, default_value_t = 1)]
    cost: u32,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.02)]
    gap: f64,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    no_sbc: bool,
    #[arg(long)]
    no_vi: bool,
    /// Solve each anesthesiologist pool separately.
    #[arg(long)]
    decompose: bool,
}

impl SolverArgs {
    fn options(&self) -> Result<SolveOptions, CliError> {
        if !(self.gap >= 0.0) {
            return Err(CliError::Usage(format!("gap {} must be nonnegative", self.gap)));
        }
        let params = SolveParams { rel_gap: self.gap, time_limit: self.time_limit, ..SolveParams::default() };
        Ok(SolveOptions {
            params,
            sbc: if self.no_sbc { SbcOptions::none() } else { SbcOptions::default() },
            idle_vi: !self.no_vi,
            decompose: self.decompose,
            ..SolveOptions::default()
        })
    }
}

/// Fully resolved configuration of one run, written to the manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub instance_source: String,
    pub cost_structure: Option<u32>,
    pub model: Option<ModelTag>,
    pub gamma: Option<f64>,
    pub setting: Option<String>,
    pub n: Option<usize>,
    pub n_prime: Option<usize>,
    pub k: Option<usize>,
    pub seeds: BTreeMap<String, u64>,
    pub solve: Option<SolveOptions>,
    pub epsilon: Option<f64>,
    pub max_iterations: Option<usize>,
    pub master_time_limit: Option<f64>,
    pub output_dir: String,
}

/// Current run plus the configurations of earlier runs in the same directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run: RunConfig,
    pub history: Vec<RunConfig>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest, CliError> {
        let text = read(&dir.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", dir.join(MANIFEST).display())))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(dir: &Path, run: RunConfig) -> Result<(), CliError> {
    let mut history = vec![];
    if let Ok(old) = Manifest::read(dir) {
        history = old.history;
        history.push(old.run);
    }
    let m = Manifest { version: env!("CARGO_PKG_VERSION").into(), run, history };
    write(dir, MANIFEST, &serde_json::to_string_pretty(&m).expect("manifest serializes"))
}

fn fresh_seed() -> u64 {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    (t as u64) ^ ((t >> 64) as u64) ^ u64::from(std::process::id()).rotate_left(32)
}

fn load_instance(src: &Source, out: &Path) -> Result<(Instance, String, Option<u32>), CliError> {
    let (inst, label, cost) = if let Some(p) = &src.instance {
        (parse_instance(&read(p)?)?, p.display().to_string(), None)
    } else if let Some(id) = src.id {
        (build_catalog_instance(id, src.cost)?, format!("catalog {id}"), Some(src.cost))
    } else {
        let p = out.join(INSTANCE);
        if !p.exists() {
            return Err(CliError::Usage(format!("no --instance or --id given and {} does not exist", p.display())));
        }
        (parse_instance(&read(&p)?)?, p.display().to_string(), None)
    };
    let report = validate_instance(&inst);
    if !report.is_ok() {
        return Err(CliError::Invalid(format!("instance does not validate: {:?}", report.findings)));
    }
    Ok((inst, label, cost))
}

fn parse_instance(text: &str) -> Result<Instance, CliError> {
    Instance::from_json(text).map_err(CliError::from)
}

fn parse_setting(s: &str) -> Result<OosSetting, CliError> {
    s.parse().map_err(CliError::from)
}

/// Parse `argv` (program name first), run the command, and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            // A closed pipe on stdout is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Catalog { id, cost, out } => {
            let inst = build_catalog_instance(id, cost)?;
            write(&out, INSTANCE, &inst.to_json())?;
            write_manifest(
                &out,
                RunConfig {
                    command: "catalog".into(),
                    instance_source: format!("catalog {id}"),
                    cost_structure: Some(cost),
                    output_dir: out.display().to_string(),
                    ..RunConfig::default()
                },
            )?;
            Ok(format!("wrote {} ({} surgeries, {} rooms)", out.join(INSTANCE).display(), inst.n_surgeries(), inst.n_rooms()))
        }
        Command::Sample { source, n, seed, setting, out } => {
            let (inst, label, cost) = load_instance(&source, &out)?;
            let seed = seed.unwrap_or_else(fresh_seed);
            let sc = match &setting {
                None => sample_in_sample(&inst.durations, n, seed)?,
                Some(s) => sample_out_of_sample(&inst.durations, parse_setting(s)?, n, seed)?,
            };
            write(&out, SCENARIOS, &sc.to_csv())?;
            write_manifest(
                &out,
                RunConfig {
                    command: "sample".into(),
                    instance_source: label,
                    cost_structure: cost,
                    setting,
                    n: Some(n),
                    seeds: BTreeMap::from([("scenarios".into(), seed)]),
                    output_dir: out.display().to_string(),
                    ..RunConfig::default()
                },
            )?;
            Ok(format!("wrote {} scenarios to {}", n, out.join(SCENARIOS).display()))
        }
        Command::Solve { source, model, gamma, scenarios, n, seed, solver, epsilon, max_iterations, master_time_limit, out } => {
            let tag: ModelTag = model.parse().map_err(CliError::Usage)?;
            let (inst, label, cost) = load_instance(&source, &out)?;
            let opts = solver.options()?;
            let risk = match tag {
                ModelTag::SpE | ModelTag::DroE => Risk::Expectation,
                ModelTag::SpCvar | ModelTag::DroCvar => Risk::Cvar(gamma),
            };
            risk.validate()?;
            let mut run = RunConfig {
                command: "solve".into(),
                instance_source: label,
                cost_structure: cost,
                model: Some(tag),
                gamma: matches!(risk, Risk::Cvar(_)).then_some(gamma),
                solve: Some(opts.clone()),
                output_dir: out.display().to_string(),
                ..RunConfig::default()
            };
            let bundle = match tag {
                ModelTag::SpE | ModelTag::SpCvar => {
                    let sc = match &scenarios {
                        Some(p) => ScenarioSet::from_csv(&read(p)?)?,
                        None => {
                            let s = seed.unwrap_or_else(fresh_seed);
                            run.seeds.insert("scenarios".into(), s);
                            let sc = sample_in_sample(&inst.durations, n, s)?;
                            write(&out, SCENARIOS, &sc.to_csv())?;
                            sc
                        }
                    };
                    if sc.n_surgeries() != inst.n_surgeries() {
                        return Err(CliError::Invalid(format!(
                            "scenario width {} but the instance has {} surgeries",
                            sc.n_surgeries(),
                            inst.n_surgeries()
                        )));
                    }
                    run.n = Some(sc.len());
                    if let Some(p) = &scenarios {
                        run.instance_source = format!("{}; scenarios {}", run.instance_source, p.display());
                    }
                    match risk {
                        Risk::Expectation => solve_sp_e(&inst, &sc, &opts)?,
                        Risk::Cvar(g) => solve_sp_cvar(&inst, &sc, g, &opts)?,
                    }
                }
                ModelTag::DroE | ModelTag::DroCvar => {
                    let mopts = MasterOptions {
                        solve: opts.clone(),
                        max_iterations,
                        master_time_limit: Some(master_time_limit),
                        ..MasterOptions::default()
                    };
                    run.epsilon = Some(epsilon);
                    run.max_iterations = Some(max_iterations);
                    run.master_time_limit = Some(master_time_limit);
                    let res = ccg(&inst, risk, epsilon, &mopts)?;
                    write(&out, TRACE, &res.trace_csv())?;
                    res.final_bundle
                }
            };
            write(&out, SOLUTION, &serde_json::to_string_pretty(&bundle).expect("bundle serializes"))?;
            let mean = &inst.durations.mean;
            let q = evaluate_recourse(&inst, &bundle.first_stage, mean)?.q;
            write(&out, SCHEDULE, &schedule_table(&bundle.first_stage, &q, mean))?;
            if !out.join(INSTANCE).exists() {
                write(&out, INSTANCE, &inst.to_json())?;
            }
            write_manifest(&out, run)?;
            Ok(format!(
                "{tag}: objective {:.4} (fixed {:.4}, risk {:.4}), gap {:.4}, {:.1}s",
                bundle.objective, bundle.fixed_cost, bundle.risk_term, bundle.gap, bundle.wall_time
            ))
        }
        Command::Evaluate { source, solution, setting, nprime, seed, bins, out } => {
            let (inst, label, cost) = load_instance(&source, &out)?;
            let sol_path = solution.unwrap_or_else(|| out.join(SOLUTION));
            let bundle: SolutionBundle = serde_json::from_str(&read(&sol_path)?)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", sol_path.display())))?;
            let st = parse_setting(&setting)?;
            let seed = seed.unwrap_or_else(fresh_seed);
            let sc = sample_out_of_sample(&inst.durations, st, nprime, seed)?;
            let m = simulate(&inst, &bundle.first_stage, &sc)?;
            let dis = disappointment(bundle.objective, &m.total_cost)?;
            let mut table = String::new();
            for (k, line) in m.to_csv().lines().enumerate() {
                let extra = if k == 0 { "disappointment".to_string() } else { format!("{:.6}", dis[k - 1]) };
                table.push_str(&format!("{line},{extra}\n"));
            }
            write(&out, METRICS, &table)?;
            let mean_dis = dis.iter().sum::<f64>() / dis.len() as f64;
            let mut summary = m.summary_csv();
            summary.push_str(&format!("disappointment,{mean_dis:.6},\n"));
            write(&out, SUMMARY, &summary)?;
            let mut hist = String::from("metric,lower,upper,count\n");
            for metric in [Metric::Waiting, Metric::RoomOvertime, Metric::AnesOvertime, Metric::TotalCost] {
                for (lo, hi, c) in m.histogram(metric, bins) {
                    hist.push_str(&format!("{},{lo:.6},{hi:.6},{c}\n", metric.name()));
                }
            }
            write(&out, HISTOGRAM, &hist)?;
            write_manifest(
                &out,
                RunConfig {
                    command: "evaluate".into(),
                    instance_source: format!("{label}; solution {}", sol_path.display()),
                    cost_structure: cost,
                    model: Some(bundle.model_tag),
                    setting: Some(st.to_string()),
                    n_prime: Some(nprime),
                    seeds: BTreeMap::from([("scenarios".into(), seed)]),
                    output_dir: out.display().to_string(),
                    ..RunConfig::default()
                },
            )?;
            Ok(format!(
                "{} under {st}: total {:.2}, waiting {:.2}, room overtime {:.2}",
                bundle.model_tag,
                m.mean(Metric::TotalCost),
                m.mean(Metric::Waiting),
                m.mean(Metric::RoomOvertime)
            ))
        }
        Command::Mco { source, k, n, nprime, seed, solver, out } => {
            let (inst, label, cost) = load_instance(&source, &out)?;
            let opts = solver.options()?;
            let seed = seed.unwrap_or_else(fresh_seed);
            let r = mco(&inst, k, n, nprime, seed, &opts)?;
            write(&out, MCO, &r.to_csv())?;
            write(&out, MCO_REPORT, &serde_json::to_string_pretty(&r).expect("report serializes"))?;
            write_manifest(
                &out,
                RunConfig {
                    command: "mco".into(),
                    instance_source: label,
                    cost_structure: cost,
                    model: Some(ModelTag::SpE),
                    n: Some(n),
                    n_prime: Some(nprime),
                    k: Some(k),
                    seeds: BTreeMap::from([("mco".into(), seed)]),
                    solve: Some(opts),
                    output_dir: out.display().to_string(),
                    ..RunConfig::default()
                },
            )?;
            Ok(format!("AOI {:.4}, mu hat {:.2}, sigma hat {:.2}", r.aoi, r.mu_hat, r.sigma_hat()))
        }
        Command::Report { runs, out } => {
            let table = report(&runs)?;
            write(&out, REPORT, &table)?;
            write_manifest(
                &out,
                RunConfig {
                    command: "report".into(),
                    instance_source: runs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "),
                    output_dir: out.display().to_string(),
                    ..RunConfig::default()
                },
            )?;
            Ok(table)
        }
    }
}

const SETTING_ORDER: [&str; 8] = ["I", "IIa", "IIb", "IIc", "IIIa", "IIIb", "IIIc", "IV"];
const MODEL_ORDER: [ModelTag; 4] = [ModelTag::SpE, ModelTag::SpCvar, ModelTag::DroE, ModelTag::DroCvar];

/// One block per metric; rows are settings and columns are models.
pub fn report(runs: &[PathBuf]) -> Result<String, CliError> {
    // metric -> setting -> model -> mean
    let mut cells: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
    let mut models = vec![];
    let mut metric_order = vec![];
    for dir in runs {
        let m = Manifest::read(dir)?;
        let (Some(tag), Some(setting)) = (m.run.model, m.run.setting.clone()) else {
            return Err(CliError::Usage(format!("{} is not an evaluate run", dir.display())));
        };
        if m.run.command != "evaluate" {
            return Err(CliError::Usage(format!("{} is not an evaluate run", dir.display())));
        }
        if !models.contains(&tag) {
            models.push(tag);
        }
        let text = read(&dir.join(SUMMARY))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Invalid(format!("{}: {e}", dir.join(SUMMARY).display())))?;
            let metric = rec.get(0).unwrap_or_default().to_string();
            let mean: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Invalid(format!("{}: bad mean for {metric}", dir.join(SUMMARY).display())))?;
            if !metric_order.contains(&metric) {
                metric_order.push(metric.clone());
            }
            cells.entry(metric).or_default().entry(setting.clone()).or_default().insert(tag.to_string(), mean);
        }
    }
    models.sort_by_key(|t| MODEL_ORDER.iter().position(|x| x == t));
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["metric".to_string(), "setting".to_string()];
    header.extend(models.iter().map(|t| t.to_string()));
    w.write_record(&header).expect("in-memory write");
    for metric in &metric_order {
        let by_setting = &cells[metric];
        let mut settings: Vec<&String> = by_setting.keys().collect();
        settings.sort_by_key(|s| SETTING_ORDER.iter().position(|x| x == s).unwrap_or(usize::MAX));
        for s in settings {
            let mut row = vec![metric.clone(), s.clone()];
            row.extend(models.iter().map(|t| by_setting[s].get(&t.to_string()).map_or(String::new(), |v| format!("{v:.2}"))));
            w.write_record(&row).expect("in-memory write");
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("flush")).expect("utf8"))
}
