//! `sharedctl`: drive the toolkit from the shell.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when the data or a
//! model is at fault.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharedctl::controller::{solve_dare, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use sharedctl::experiment::{
    compute_metrics, demo_seed, load_log_dir, run_experiment, write_side_files, Execution, ExperimentConfig,
};
use sharedctl::koopman::{extract_linear, fit_koopman, BasisSpec, KoopmanModel};
use sharedctl::lander::ControlInput;
use sharedctl::pilots::{NominalController, Pilot, PilotSpec};
use sharedctl::trial::{run_trial, Assist, InputSource, Paradigm, ScriptedInputs, TrialLog};

#[derive(Parser, Debug)]
#[command(name = "sharedctl", version, about = "Shared-control lander toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fly unassisted demonstration trials with a synthetic pilot.
    Demo(DemoArgs),
    /// Fit a model from trial logs.
    Train(TrainArgs),
    /// Fly a single trial and print or save its log.
    Run(RunArgs),
    /// Metrics and statistics over a directory of trial logs.
    Eval(EvalArgs),
    /// Start the live session server.
    Serve(ServeArgs),
    /// Run the whole protocol: demos, models, evaluation, report.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment config (JSON); supplies world, cost and metric settings.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(multiple = false)]
struct PilotArg {
    /// Novice skill in [0, 1].
    #[arg(long)]
    skill: Option<f64>,
    /// Use the expert pilot.
    #[arg(long)]
    expert: bool,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    pilot: PilotArg,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR", default_value = "demos")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Trial log files or directories to search for `trial_*.json`.
    #[arg(required = true, value_name = "LOGS")]
    logs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Ridge parameter; defaults to the config's.
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "NAME")]
    paradigm: Paradigm,
    /// Model file; required for the shared paradigms.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON list of `[u_main, u_rot]` pairs, one per step; zeros after the end.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["skill", "expert"])]
    inputs: Option<PathBuf>,
    #[command(flatten)]
    pilot: PilotArg,
    #[arg(long, default_value = "cli")]
    pilot_id: String,
    /// Write the log here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    dir: PathBuf,
    /// Write metrics.json, trials.csv and heatmaps/ here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Step once per input frame instead of on the 20 ms clock.
    #[arg(long)]
    lockstep: bool,
    /// Directory with the cockpit UI files.
    #[arg(long = "static", value_name = "DIR")]
    static_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "models")]
    models: PathBuf,
    /// Where session logs are written.
    #[arg(long, value_name = "DIR", default_value = "sessions")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run trials on one thread (output is identical either way).
    #[arg(long)]
    serial: bool,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<sharedctl::Error> for Failure {
    fn from(e: sharedctl::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Demo(a) => demo(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig, Failure> {
    match &arg.config {
        Some(path) => Ok(ExperimentConfig::load(path)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn pilot_spec(arg: &PilotArg, seed: u64) -> Option<PilotSpec> {
    match (arg.expert, arg.skill) {
        (true, _) => Some(PilotSpec::expert(seed)),
        (false, Some(skill)) => Some(PilotSpec::novice(skill, seed)),
        (false, None) => None,
    }
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Outcome {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Data(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn demo(a: DemoArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    let spec = pilot_spec(&a.pilot, a.seed).ok_or_else(|| Failure::Usage("demo needs --skill or --expert".into()))?;
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let who = if a.pilot.expert { "expert" } else { "novice" };
    let controller = NominalController::new(&cfg.world)?;
    let mut successes = 0;
    for t in 0..a.trials {
        let seed = demo_seed(a.seed, None, t);
        let mut pilot = Pilot::new(&spec, controller.clone(), seed)?;
        let log = run_trial(&cfg.world, Paradigm::UserOnly, None, &mut pilot, who, seed)?;
        successes += usize::from(log.outcome.status.as_str() == "success");
        log.save(&a.out.join(format!("trial_{t:02}.json")))?;
    }
    println!("{} demonstrations ({successes} successful) written to {}", a.trials, a.out.display());
    Ok(())
}

fn gather_logs(paths: &[PathBuf]) -> Result<Vec<TrialLog>, Failure> {
    let mut logs = Vec::new();
    for p in paths {
        if p.is_dir() {
            logs.extend(load_log_dir(p)?);
        } else {
            logs.push(TrialLog::load(p)?);
        }
    }
    Ok(logs)
}

fn train(a: TrainArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    let ridge = a.ridge.unwrap_or(cfg.ridge);
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Failure::Usage("--ridge must be finite and >= 0".into()));
    }
    let logs = gather_logs(&a.logs)?;
    if logs.is_empty() {
        return Err(Failure::Data("no trial logs found".into()));
    }
    let trajs: Vec<_> = logs.iter().map(TrialLog::joint_samples).collect();
    let model = fit_koopman(&trajs, &BasisSpec::default(), ridge)?;
    let sol = solve_dare(&extract_linear(&model)?, &cfg.cost, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
    model.save(&a.out, Some(sol.export()))?;
    println!(
        "model written to {} ({} snapshot pairs from {} logs, spectral radius {:.4})",
        a.out.display(),
        model.n_samples,
        logs.len(),
        sol.spectral_radius
    );
    Ok(())
}

fn read_inputs(path: &Path) -> Result<Vec<ControlInput>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let pairs: Vec<[f64; 2]> =
        serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: expected [[u_main, u_rot], ...]: {e}", path.display())))?;
    Ok(pairs.into_iter().map(|[m, r]| ControlInput::new(m, r)).collect())
}

fn run(a: RunArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    let assist = match (a.paradigm.is_shared(), &a.model) {
        (true, None) => return Err(Failure::Usage(format!("--paradigm {} requires --model", a.paradigm))),
        (false, Some(_)) => return Err(Failure::Usage("--model only applies to the shared paradigms".into())),
        (false, None) => None,
        (true, Some(path)) => {
            let model = KoopmanModel::load(path)?;
            let sol = solve_dare(&extract_linear(&model)?, &cfg.cost, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
            Some(Assist { solution: sol.into(), cost: cfg.cost.clone() })
        }
    };
    let mut source: Box<dyn InputSource> = match (&a.inputs, pilot_spec(&a.pilot, a.seed)) {
        (Some(path), _) => Box::new(ScriptedInputs(read_inputs(path)?)),
        (None, Some(spec)) => {
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            Box::new(Pilot::new(&spec, NominalController::new(&cfg.world)?, a.seed)?)
        }
        // nobody at the controls
        (None, None) => Box::new(ScriptedInputs(Vec::new())),
    };
    let log = run_trial(&cfg.world, a.paradigm, assist, source.as_mut(), &a.pilot_id, a.seed)?;
    match &a.out {
        Some(path) => {
            log.save(path)?;
            eprintln!("{}: {} after {} steps", path.display(), log.outcome.status.as_str(), log.outcome.steps);
        }
        None => emit(&log.to_json())?,
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    if !a.dir.is_dir() {
        return Err(Failure::Data(format!("{}: not a directory", a.dir.display())));
    }
    let logs = load_log_dir(&a.dir)?;
    if logs.is_empty() {
        return Err(Failure::Data(format!("no trial logs found in {}", a.dir.display())));
    }
    let metrics = compute_metrics(&logs, &cfg.cost, &cfg.ergodic)?;
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    match &a.out {
        Some(out) => {
            write_text(&out.join("metrics.json"), &json)?;
            write_side_files(out, &metrics, &logs, &cfg.world)?;
            eprintln!("{} trials evaluated; results in {}", logs.len(), out.display());
        }
        None => emit(&json)?,
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    let serve_cfg = cockpit::ServeConfig {
        bind: a.addr,
        world: cfg.world,
        cost: cfg.cost,
        logs_dir: a.out,
        models_dir: a.models,
        static_dir: a.static_dir,
        lockstep: a.lockstep,
        ..cockpit::ServeConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(e.to_string()))?;
    runtime.block_on(async {
        let server = cockpit::bind(serve_cfg).await.map_err(|e| Failure::Data(e.to_string()))?;
        eprintln!("listening on http://{}", server.local_addr());
        server.run().await.map_err(|e| Failure::Data(e.to_string()))
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn experiment(a: ExperimentArgs) -> Outcome {
    let mut cfg = match (&a.config.config, a.seed) {
        (Some(_), _) => load_config(&a.config)?,
        (None, Some(seed)) => ExperimentConfig::with_seed(seed),
        (None, None) => ExperimentConfig::default(),
    };
    if let (Some(_), Some(seed)) = (&a.config.config, a.seed) {
        cfg.master_seed = seed;
    }
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    let exec = if a.serial { Execution::Serial } else { Execution::Parallel };
    let report = run_experiment(&cfg, exec)?;
    println!("report written to {}", cfg.output_dir.join("report.json").display());
    println!("{:<18} {:>6} {:>8} {:>8} {:>9} {:>10} {:>10}", "paradigm", "trials", "success", "time_s", "path_m", "cost", "epsilon");
    for s in &report.metrics.summary {
        println!(
            "{:<18} {:>6} {:>8} {:>8} {:>9} {:>10} {:>10}",
            s.paradigm.as_str(),
            s.trials,
            fmt_opt(s.success_rate, 2),
            fmt_opt(s.mean_time_s, 2),
            fmt_opt(s.mean_path_length_m, 2),
            fmt_opt(s.mean_total_cost, 0),
            s.mean_epsilon.map_or_else(|| "-".into(), |e| format!("{e:.3e}")),
        );
    }
    for m in &report.metrics.stats {
        match &m.anova {
            Some(r) => println!("ANOVA {:<14} F({}, {}) = {:.3}, p = {:.3e}", m.metric, r.df_between, r.df_within, r.f, r.p),
            None => println!("ANOVA {:<14} n/a ({})", m.metric, m.note.as_deref().unwrap_or("no data")),
        }
    }
    Ok(())
}
