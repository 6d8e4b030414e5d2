use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use whittle_lab::experiments::{run_experiment, ExperimentId, ExperimentSpec};
use whittle_lab::generators::{gen_levy_matrix, quadratic_costs, reset_rows, GenKind, GenSpec};
use whittle_lab::indexability::{
    check_conditions, default_nesting_grid, verify_nesting, DEFAULT_K_CAP, NESTING_GRID_POINTS,
};
use whittle_lab::model::{BanditModel, ModelError, MultiArmModel};
use whittle_lab::monotone::{check_monotone, whittle_threshold, ThresholdError};
use whittle_lab::report;
use whittle_lab::sim::{
    opt_budget_required, run_comparison, PolicyKind, SimConfig, SimError, DEFAULT_OPT_BUDGET,
};
use whittle_lab::whittle::{
    compute_whittle, index_bounds, whittle_oracle_all, WhittleError, WhittleTable,
    ORACLE_DEFAULT_TOL,
};

/// Exit codes: 0 success, 2 validation failure, 3 indexability or
/// certification failure, 4 budget exceeded.
enum CliError {
    Validation(String),
    Indexability(String),
    Budget(String),
    Other(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Indexability(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Validation(m) | CliError::Indexability(m) | CliError::Budget(m) => m.clone(),
            CliError::Other(e) => format!("{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(io) => CliError::Other(io.into()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<WhittleError> for CliError {
    fn from(e: WhittleError) -> Self {
        match e {
            WhittleError::Mdp(inner) => CliError::Other(inner.into()),
            other => CliError::Indexability(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            SimError::Whittle(inner) => inner.into(),
            other => CliError::Other(other.into()),
        }
    }
}

#[derive(Parser)]
#[command(name = "whittle-lab", version, about = "Whittle indices for restless bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the index table of a model file (CSV + JSON).
    Index {
        #[arg(long)]
        model: PathBuf,
        /// auto | general | restart | threshold | oracle
        #[arg(long, default_value = "auto")]
        method: String,
        /// Output directory (defaults to the model's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Indexability, monotonicity, and PCL diagnostics as JSON.
    Check {
        #[arg(long)]
        model: PathBuf,
        /// Output file (defaults to stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo policy comparison on a multi-armed instance.
    Simulate {
        /// Arm model file; repeat for several distinct arms.
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
        /// Replicate a single model into n arms.
        #[arg(long)]
        n: Option<usize>,
        /// Arms to activate each step.
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Trajectories.
        #[arg(long = "S", default_value_t = 2500)]
        s: usize,
        /// Horizon.
        #[arg(long = "T", default_value_t = 250)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of wip,myp,opt.
        #[arg(long, default_value = "wip,myp")]
        policies: String,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a preset benchmark experiment (1-5).
    Experiment {
        #[arg(long)]
        id: String,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        /// Structured family level 1-4 (experiments 1 and 3).
        #[arg(long)]
        ell: Option<u8>,
        /// Random monotone width (experiments 2 and 4).
        #[arg(long)]
        d: Option<f64>,
        #[arg(long = "S")]
        s: Option<usize>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Independent replications of the whole instance.
        #[arg(long, default_value_t = 1)]
        reps: u64,
        /// Override the preset policy set (comma-separated).
        #[arg(long)]
        policies: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a model file: a generated passive matrix, restart or
    /// heavy-tailed active matrix, and the quadratic cost family.
    Generate {
        /// p1 | p2 | p3 | p4 | rand-monotone | levy
        #[arg(long)]
        kind: String,
        #[arg(long = "K")]
        k: usize,
        /// p for the structured kinds, d for rand-monotone, scale for levy.
        #[arg(long)]
        param: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
        /// Active dynamics: reset (to state 1) or levy.
        #[arg(long, default_value = "reset")]
        active: String,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Index { model, method, out } => cmd_index(&model, &method, out.as_deref()),
        Command::Check { model, out } => cmd_check(&model, out.as_deref()),
        Command::Simulate { model, n, m, s, t, seed, policies, out } => {
            cmd_simulate(&model, n, m, s, t, seed, &policies, out.as_deref())
        }
        Command::Experiment {
            id,
            k,
            n,
            m,
            beta,
            ell,
            d,
            s,
            t,
            seed,
            reps,
            policies,
            out,
        } => cmd_experiment(&id, k, n, m, beta, ell, d, s, t, seed, reps, policies.as_deref(), &out),
        Command::Generate { kind, k, param, seed, beta, active, out } => {
            cmd_generate(&kind, k, param, seed, beta, &active, &out)
        }
    }
}

fn load_validated(path: &Path) -> Result<BanditModel, CliError> {
    let model = BanditModel::load(path)?;
    model.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(model)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_policies(text: &str) -> Result<Vec<PolicyKind>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            PolicyKind::parse(s)
                .ok_or_else(|| CliError::Other(anyhow!("unknown policy '{s}' (wip, myp, opt)")))
        })
        .collect()
}

fn cmd_index(model_path: &Path, method: &str, out: Option<&Path>) -> Result<(), CliError> {
    let model = load_validated(model_path)?;

    let mut certification: Option<serde_json::Value> = None;
    let mut uncertified = false;
    let table: WhittleTable = match method {
        "auto" => {
            if model.is_restart() {
                match whittle_lab::restart::compute_whittle_restart(&model) {
                    Err(WhittleError::DegenerateStep { .. }) => compute_whittle(&model)?.table,
                    other => other?,
                }
            } else {
                compute_whittle(&model)?.table
            }
        }
        "general" => compute_whittle(&model)?.table,
        "restart" => whittle_lab::restart::compute_whittle_restart(&model)?,
        "threshold" => {
            let run = whittle_threshold(&model).map_err(|e| match e {
                ThresholdError::Mdp(inner) => CliError::Other(inner.into()),
                other => CliError::Indexability(other.to_string()),
            })?;
            certification = Some(report::threshold_json(&run.report));
            uncertified = !run.report.certified;
            run.table
        }
        "oracle" => WhittleTable::from_indices(whittle_oracle_all(&model, ORACLE_DEFAULT_TOL)?),
        other => return Err(CliError::Other(anyhow!("unknown method '{other}'"))),
    };

    let stem = model_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| model_path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let meta = vec![report::kv("model", stem), report::kv("method", method)];
    write(&dir.join(format!("{stem}_index.csv")), &report::table_csv(&table, &meta))?;
    let mut json_out = report::table_json(&table);
    if let Some(cert) = certification {
        json_out["certification"] = cert;
    }
    write(
        &dir.join(format!("{stem}_index.json")),
        &serde_json::to_string_pretty(&json_out).expect("table json"),
    )?;

    for x in 0..table.num_states() {
        println!("state {:>3}  w = {:.6}  group {}", x + 1, table.index[x], table.group_of(x));
    }
    if uncertified {
        return Err(CliError::Indexability(
            "threshold-route hypotheses failed; table written but uncertified".into(),
        ));
    }
    Ok(())
}

fn cmd_check(model_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let model = BanditModel::load(model_path)?;
    let validation = report::validation_json(&model);
    if !validation["ok"].as_bool().unwrap_or(false) {
        let text = serde_json::to_string_pretty(&json!({ "validation": validation }))
            .expect("check json");
        println!("{text}");
        if let Some(path) = out {
            write(path, &text)?;
        }
        return Err(CliError::Validation("model failed validation".into()));
    }

    let conditions = check_conditions(&model, DEFAULT_K_CAP, true)
        .map_err(|e| CliError::Other(e.into()))?;
    let monotone = check_monotone(&model);
    let window = index_bounds(&model)?;
    let grid = default_nesting_grid(&model)?;
    let nesting = verify_nesting(&model, &grid).map_err(|e| CliError::Other(e.into()))?;
    let threshold = whittle_threshold(&model);
    let pi0 = vec![1.0 / model.num_states() as f64; model.num_states()];
    let pcl = whittle_lab::whittle::check_pcl(&model, &pi0, DEFAULT_K_CAP)
        .map_err(|e| CliError::Other(e.into()))?;

    let doc = json!({
        "validation": validation,
        "restart": {
            "is_restart": model.is_restart(),
        },
        "conditions": report::conditions_json(&conditions),
        "monotone": report::monotone_json(&monotone),
        "nesting": report::nesting_json(&nesting, NESTING_GRID_POINTS, window),
        "threshold_certification": match &threshold {
            Ok(run) => report::threshold_json(&run.report),
            Err(e) => json!({"certified": false, "error": e.to_string()}),
        },
        "pcl": report::pcl_json(&pcl),
    });
    let text = serde_json::to_string_pretty(&doc).expect("check json");
    println!("{text}");
    if let Some(path) = out {
        write(path, &text)?;
    }

    if !nesting.is_nested() {
        return Err(CliError::Indexability(
            "passive-set nesting violated on the default grid".into(),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    model_paths: &[PathBuf],
    n: Option<usize>,
    m: usize,
    s: usize,
    t: usize,
    seed: u64,
    policies: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut arms = Vec::new();
    for path in model_paths {
        arms.push(load_validated(path)?);
    }
    if let Some(n) = n {
        if arms.len() == 1 {
            let proto = arms.pop().expect("one arm");
            arms = vec![proto; n];
        } else if arms.len() != n {
            return Err(CliError::Other(anyhow!(
                "--n {n} conflicts with {} model files",
                arms.len()
            )));
        }
    }
    let multi = MultiArmModel::new(arms, m)?;
    let mut cfg = SimConfig {
        horizon: t,
        trajectories: s,
        seed,
        policies: parse_policies(policies)?,
        initial: None,
    };

    // Budget check up front so a too-large opt request degrades to a
    // partial run instead of failing late.
    let mut opt_skipped = None;
    if cfg.policies.contains(&PolicyKind::Opt) {
        let required = opt_budget_required(&multi);
        if required > DEFAULT_OPT_BUDGET {
            cfg.policies.retain(|&p| p != PolicyKind::Opt);
            opt_skipped =
                Some(format!("opt omitted: needs {required} state-action pairs, budget {DEFAULT_OPT_BUDGET}"));
        }
    }

    let sim_report = run_comparison(&multi, &cfg, DEFAULT_OPT_BUDGET)?;
    let mut meta = vec![
        report::kv("arms", multi.num_arms()),
        report::kv("m", multi.budget()),
        report::kv("seed", seed),
    ];
    if let Some(note) = &opt_skipped {
        meta.push(report::kv("partial", note));
    }
    let csv = report::sim_csv(&sim_report, &meta);
    print!("{csv}");
    if let Some(alpha) = sim_report.alpha_opt {
        println!("# alpha_opt: {alpha}");
    }
    if let Some(eps) = sim_report.eps_myp {
        println!("# eps_myp: {eps}");
    }
    if let Some(dir) = out {
        write(&dir.join("sim.csv"), &csv)?;
        write(
            &dir.join("sim.json"),
            &serde_json::to_string_pretty(&report::sim_json(&sim_report)).expect("sim json"),
        )?;
    }
    if let Some(note) = opt_skipped {
        return Err(CliError::Budget(note));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    id: &str,
    k: Option<usize>,
    n: Option<usize>,
    m: Option<usize>,
    beta: Option<f64>,
    ell: Option<u8>,
    d: Option<f64>,
    s: Option<usize>,
    t: Option<usize>,
    seed: u64,
    reps: u64,
    policies: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let id = ExperimentId::parse(id)
        .ok_or_else(|| CliError::Other(anyhow!("experiment id must be 1..5, got '{id}'")))?;
    let mut spec = ExperimentSpec::preset(id, seed);
    if let Some(k) = k {
        spec.k = k;
        spec.rand_d = 5.0 / k as f64;
    }
    if let Some(n) = n {
        spec.n = n;
    }
    if let Some(m) = m {
        spec.m = m;
    }
    if let Some(beta) = beta {
        spec.beta = beta;
    }
    if let Some(ell) = ell {
        spec.ell = ell;
    }
    if let Some(d) = d {
        spec.rand_d = d;
    }
    if let Some(s) = s {
        spec.sim.trajectories = s;
    }
    if let Some(t) = t {
        spec.sim.horizon = t;
    }
    if let Some(p) = policies {
        spec.sim.policies = parse_policies(p)?;
    }

    // Degrade a too-large opt request to a partial run.
    let mut opt_skipped = None;
    if spec.sim.policies.contains(&PolicyKind::Opt) {
        let probe = whittle_lab::experiments::build_arms(&spec, 0)
            .map_err(|e| CliError::Other(anyhow!(e.to_string())))?;
        let required = opt_budget_required(&probe);
        if required > DEFAULT_OPT_BUDGET {
            spec.sim.policies.retain(|&p| p != PolicyKind::Opt);
            opt_skipped =
                Some(format!("opt omitted: needs {required} state-action pairs, budget {DEFAULT_OPT_BUDGET}"));
        }
    }

    let spec_doc = json!({
        "experiment": id.number(),
        "K": spec.k,
        "n": spec.n,
        "m": spec.m,
        "beta": spec.beta,
        "generator": spec.generator_note(),
        "S": spec.sim.trajectories,
        "T": spec.sim.horizon,
        "seed": seed,
        "reps": reps,
        "policies": spec.sim.policies.iter().map(|p| p.name()).collect::<Vec<_>>(),
        "partial": opt_skipped,
        "tool_version": report::TOOL_VERSION,
    });
    write(&out.join("experiment.json"), &serde_json::to_string_pretty(&spec_doc).expect("spec"))?;

    let mut summary = String::from("rep,policy,mean_cost,stderr,alpha_opt,eps_myp\n");
    for rep in 0..reps {
        let run = run_experiment(&spec, rep).map_err(|e| match e {
            whittle_lab::experiments::ExperimentError::Sim(se) => se.into(),
            other => CliError::Other(anyhow!(other.to_string())),
        })?;
        let rep_dir = out.join(format!("rep{rep:03}"));
        let meta = vec![
            report::kv("experiment", id.number()),
            report::kv("generator", spec.generator_note()),
            report::kv("rep", rep),
            report::kv("seed", seed),
        ];
        write(&rep_dir.join("report.csv"), &report::sim_csv(&run.report, &meta))?;
        write(
            &rep_dir.join("report.json"),
            &serde_json::to_string_pretty(&report::sim_json(&run.report)).expect("sim json"),
        )?;
        for (i, table) in run.tables.iter().enumerate() {
            let arm_meta = vec![
                report::kv("experiment", id.number()),
                report::kv("rep", rep),
                report::kv("arm", i + 1),
            ];
            write(
                &rep_dir.join(format!("arm{:02}_index.csv", i + 1)),
                &report::table_csv(table, &arm_meta),
            )?;
        }
        for (kind, est) in &run.report.cost {
            summary.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rep,
                kind.name(),
                est.mean,
                est.stderr,
                run.report.alpha_opt.map(|v| v.to_string()).unwrap_or_default(),
                run.report.eps_myp.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        println!(
            "rep {rep}: {}",
            run.report
                .cost
                .iter()
                .map(|(k, e)| format!("J({})={:.6}", k.name(), e.mean))
                .collect::<Vec<_>>()
                .join("  ")
        );
    }
    write(&out.join("summary.csv"), &summary)?;

    if let Some(note) = opt_skipped {
        return Err(CliError::Budget(note));
    }
    Ok(())
}

fn cmd_generate(
    kind: &str,
    k: usize,
    param: f64,
    seed: u64,
    beta: f64,
    active: &str,
    out: &Path,
) -> Result<(), CliError> {
    let kind = GenKind::parse(kind)
        .ok_or_else(|| CliError::Other(anyhow!("unknown generator kind '{kind}'")))?;
    let spec = GenSpec { kind, size: k, param, seed };
    let p0 = spec.matrix().map_err(|e| CliError::Validation(e.to_string()))?;
    let p1 = match active {
        "reset" => reset_rows(k, 0),
        "levy" => gen_levy_matrix(k, seed ^ 0x6163_7469, 1.0),
        other => return Err(CliError::Other(anyhow!("unknown active dynamics '{other}'"))),
    };
    let (c0, c1) = quadratic_costs(k);
    let model = BanditModel::from_rows(&p0, &p1, &c0, &c1, beta)?;
    model.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    write(out, &model.to_json())?;
    println!("wrote {}", out.display());
    Ok(())
}
