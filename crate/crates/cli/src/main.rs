use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sls_core::adaptation::adapt_feedforward;
use sls_core::artifact::{load_controller, load_maps, save_controller};
use sls_core::experiments::{
    bench_adaptation, bench_mug_sugar, bench_pickplace, default_edits, rollout_controller, run_scenario, write_json, BenchmarkReport, RunOptions,
    TargetEdit,
};
use sls_core::scenario::bundled;
use sls_core::{Error, Result, Scenario};

#[derive(Parser)]
#[command(name = "sls", version, about = "Solve, roll out and benchmark SLS controllers from scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Output subdirectory name under `<out>/<scenario>/`.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario, roll it out once and write all artifacts.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write the iSLS convergence trace as CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Roll out a stored controller against a scenario.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: PathBuf,
    },
    /// Update a stored controller's feedforward for edited targets.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        /// A target edit as JSON, or a path to a JSON file holding one.
        #[arg(long)]
        edit: String,
    },
    #[command(subcommand)]
    Bench(Bench),
}

#[derive(Subcommand)]
enum Bench {
    /// Paired eSLS and MPC-LQT trials.
    MugSugar {
        #[command(flatten)]
        common: Common,
    },
    /// iSLS on the planar-arm pick-and-place scenario.
    Pickplace {
        #[command(flatten)]
        common: Common,
        /// Write one convergence trace CSV per trial.
        #[arg(long)]
        trace: bool,
    },
    /// Feedforward adaptation against full re-solves.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// JSON array of target edits, inline or as a file path.
        #[arg(long)]
        edits: Option<String>,
    },
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path);
    }
    match bundled::by_name(arg) {
        Some(text) => Scenario::from_json(text),
        None => Err(Error::validation("scenario", format!("`{arg}` is neither a file nor a bundled scenario"))),
    }
}

fn json_arg<T: serde::de::DeserializeOwned>(arg: &str) -> Result<T> {
    let path = Path::new(arg);
    let text = if path.exists() { fs::read_to_string(path)? } else { arg.to_string() };
    Ok(serde_json::from_str(&text)?)
}

fn run_dir(common: &Common, scenario: &Scenario, default_label: String) -> PathBuf {
    common.out.join(&scenario.name).join(common.label.clone().unwrap_or(default_label))
}

fn print_json(value: &serde_json::Value) {
    // A closed pipe (e.g. `| head`) is not an error for the run itself.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Outcome of a command: the exit code and the summary printed to stdout.
type Outcome = (u8, serde_json::Value);

fn solve(common: &Common, trace: bool) -> Result<Outcome> {
    let scenario = load_scenario(&common.scenario)?;
    let opts = RunOptions {
        seed: common.seed,
        out: common.out.clone(),
        label: common.label.clone(),
        trace,
    };
    let report = run_scenario(&scenario, &opts)?;
    let code = if report.converged == Some(false) { 3 } else { 0 };
    let mut value = serde_json::to_value(&report)?;
    value["dir"] = json!(opts.run_dir(&scenario));
    Ok((code, value))
}

fn rollout(common: &Common, controller: &Path) -> Result<Outcome> {
    let scenario = load_scenario(&common.scenario)?;
    let ctrl = load_controller(controller)?;
    let dir = run_dir(common, &scenario, format!("rollout-seed-{}", common.seed));
    let traj = rollout_controller(&scenario, &ctrl, common.seed, &dir.join("trajectory.csv"))?;
    let report = json!({
        "scenario": scenario.name,
        "seed": common.seed,
        "config_hash": scenario.config_hash(),
        "controller": controller,
        "realized_cost": traj.realized_cost,
    });
    write_json(&dir.join("report.json"), &report)?;
    Ok((0, report))
}

fn adapt(common: &Common, controller: &Path, maps: &Path, edit: &str) -> Result<Outcome> {
    let scenario = load_scenario(&common.scenario)?;
    let mut ctrl = load_controller(controller)?;
    let maps = load_maps(maps)?;
    if !maps.is_bound_to(&ctrl) {
        return Err(Error::validation("maps", "maps were computed for a different feedback gain"));
    }
    let edit: TargetEdit = json_arg(edit)?;
    let cost = scenario.build_cost()?;
    let x_new = edit.apply(&cost)?;
    let u_new = cost.u_d().clone();
    let flagged = maps.exceeds_vicinity(&x_new, &u_new)?;
    let start = Instant::now();
    let k = adapt_feedforward(&maps, &x_new, &u_new)?;
    let adapt_seconds = start.elapsed().as_secs_f64();
    let change = (&k - ctrl.feedforward()).amax();
    ctrl.set_feedforward(k)?;
    let dir = run_dir(common, &scenario, format!("adapt-seed-{}", common.seed));
    fs::create_dir_all(&dir)?;
    save_controller(&dir.join("controller.bin"), &ctrl)?;
    let report = json!({
        "scenario": scenario.name,
        "seed": common.seed,
        "config_hash": scenario.config_hash(),
        "edit": edit,
        "flagged": flagged,
        "feedforward_change": change,
        "adapt_seconds": adapt_seconds,
        "artifacts": ["controller.bin", "report.json"],
    });
    write_json(&dir.join("report.json"), &report)?;
    Ok((0, report))
}

fn write_bench(common: &Common, scenario: &Scenario, kind: &str, report: &BenchmarkReport) -> Result<PathBuf> {
    let dir = run_dir(common, scenario, format!("bench-{kind}-seed-{}", common.seed));
    write_json(&dir.join("report.json"), report)?;
    Ok(dir)
}

fn bench(cmd: &Bench) -> Result<Outcome> {
    match cmd {
        Bench::MugSugar { common } => {
            let scenario = load_scenario(&common.scenario)?;
            let report = bench_mug_sugar(&scenario, common.trials, common.seed)?;
            let dir = write_bench(common, &scenario, "mug-sugar", &report)?;
            let summary: Vec<_> = report.solvers.iter().map(|s| json!({"solver": s.solver, "mean": s.mean, "std": s.std})).collect();
            Ok((0, json!({"dir": dir, "solvers": summary, "details": report.details})))
        }
        Bench::Pickplace { common, trace } => {
            let scenario = load_scenario(&common.scenario)?;
            let report = bench_pickplace(&scenario, common.trials, common.seed)?;
            let dir = write_bench(common, &scenario, "pickplace", &report)?;
            let mut trials = Vec::new();
            for (i, trial) in report.details["trials"].as_array().into_iter().flatten().enumerate() {
                if *trace {
                    let rows: Vec<sls_core::TraceRow> = serde_json::from_value(trial["trace"].clone())?;
                    fs::write(dir.join(format!("trace-{i}.csv")), sls_core::isls::trace_to_csv(&rows))?;
                }
                let mut row = trial.clone();
                if let Some(obj) = row.as_object_mut() {
                    obj.remove("trace");
                }
                trials.push(row);
            }
            Ok((0, json!({"dir": dir, "trials": trials})))
        }
        Bench::Adapt { common, edits } => {
            let scenario = load_scenario(&common.scenario)?;
            let edits = match edits {
                Some(arg) => json_arg(arg)?,
                None => default_edits(&scenario),
            };
            let report = bench_adaptation(&scenario, &edits, common.seed)?;
            let dir = write_bench(common, &scenario, "adapt", &report)?;
            Ok((0, json!({"dir": dir, "details": report.details})))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_validation() => 2,
        Error::Io(_) | Error::Artifact(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { common, trace } => solve(common, *trace),
        Command::Rollout { common, controller } => rollout(common, controller),
        Command::Adapt { common, controller, maps, edit } => adapt(common, controller, maps, edit),
        Command::Bench(cmd) => bench(cmd),
    };
    match result {
        Ok((code, summary)) => {
            print_json(&summary);
            ExitCode::from(code)
        }
        Err(err) => {
            let mut body = json!({"kind": err.kind(), "message": err.to_string()});
            if let Error::Validation { field, .. } = &err {
                body["field"] = json!(field);
            }
            eprintln!("{body}");
            ExitCode::from(exit_code(&err))
        }
    }
}
