//! Command-line front end: scenario in, artifacts out.
//!
//! Subcommands:
//! - `run` — simulate a scenario; writes `trajectory.csv`, `setpoints.jsonl`,
//!   `summary.txt`, `plot_trajectory.py`, and (per `--analysis`)
//!   `stability.txt` / `envelope.txt` into `--out`.
//! - `analyze` — equilibrium, eigenvalue, and envelope reports without
//!   simulating.
//! - `sweep` — the same scenario across consecutive seeds on worker threads;
//!   one trajectory per seed plus `sweep_summary.txt`.
//! - `validate` — parse and cross-check a scenario, reporting the first fault.
//!
//! `--scenario` takes a file path or a bundled preset name. `--mode` and
//! `--seed` override the file's settings after validation.
//!
//! Exit codes: 0 ok; 2 configuration error (unreadable or invalid scenario,
//! unwritable output); 3 state divergence, with whatever artifacts the run
//! produced up to the failure preserved; 4 when the only failures were
//! abandoned re-dispatch plans.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dynamics::RectifierMode;
use crate::report;
use crate::scenario::{self, Scenario};
use crate::simengine::{SimError, Simulator, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

/// Entry point used by the `sstnet` binary; `args` excludes the program name.
/// Returns the process exit code instead of exiting, so tests can drive it.
pub fn main_with_args<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let argv = std::iter::once("sstnet".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here too; only usage faults are errors.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Analyze(a) => cmd_analyze(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Validate(a) => cmd_validate(&a),
    }
}

#[derive(Parser)]
#[command(
    name = "sstnet",
    about = "Simulate and analyze SST-interfaced microgrid networks with battery storage",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write trajectory artifacts
    Run(RunArgs),
    /// Report equilibrium, eigenvalues, and input-voltage envelopes without simulating
    Analyze(AnalyzeArgs),
    /// Run one scenario across consecutive seeds on worker threads
    Sweep(SweepArgs),
    /// Parse and cross-check a scenario, reporting the first fault
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file path, or a bundled preset name (ieee34_9sst, fig7_sharing, fig8_delay)
    #[arg(long, value_name = "FILE|PRESET")]
    scenario: String,
}

#[derive(Args)]
struct OutArg {
    /// Directory artifacts are written into (created if missing)
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct OverrideArgs {
    /// Override the scenario's rectifier fidelity
    #[arg(long, value_enum, value_name = "MODE")]
    mode: Option<ModeArg>,
    /// Override the scenario's noise seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Extra reports to write alongside the trajectory
    #[arg(long, value_enum, value_delimiter = ',', value_name = "LIST")]
    analysis: Vec<Analysis>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Which reports to produce
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        value_name = "LIST",
        default_values_t = [Analysis::Eigen, Analysis::Envelope]
    )]
    analysis: Vec<Analysis>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// How many consecutive seeds to run, starting at the scenario's seed
    #[arg(long, value_name = "N", default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=100_000))]
    seeds: u64,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    Fundamental,
}

impl From<ModeArg> for RectifierMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => RectifierMode::Full,
            ModeArg::Fundamental => RectifierMode::Fundamental,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Analysis {
    /// Equilibrium + linearization eigenvalue report
    Eigen,
    /// Input-voltage comparison-envelope report
    Envelope,
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Resolve `--scenario`: an existing file wins, otherwise a preset name.
fn load_scenario(input: &str) -> Result<Scenario, String> {
    let text = if Path::new(input).is_file() {
        fs::read_to_string(input).map_err(|e| format!("scenario '{input}': {e}"))?
    } else if input.contains(['/', '\\']) {
        return Err(format!("scenario '{input}': file not found"));
    } else {
        match scenario::preset(input) {
            Ok(t) => t.to_string(),
            Err(e) => return Err(format!("scenario '{input}': {e}")),
        }
    };
    scenario::parse(&text).map_err(|e| format!("scenario '{input}': {e}"))
}

fn apply_overrides(scn: &mut Scenario, ov: &OverrideArgs) {
    if let Some(mode) = ov.mode {
        scn.sim.mode = mode.into();
    }
    if let Some(seed) = ov.seed {
        scn.sim.seed = seed;
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("output directory '{}': {e}", dir.display()))
}

fn write_artifact(dir: &Path, name: &str, text: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| format!("cannot write '{}': {e}", path.display()))
}

/// Step a scenario to its horizon, keeping the decimated samples gathered so
/// far even when a step diverges; the fault rides along instead of erasing
/// the partial trajectory.
fn collect(scn: &Scenario) -> Result<(Trajectory, Option<SimError>), SimError> {
    let mut sim = Simulator::new(scn)?;
    let steps = (scn.sim.t_end / scn.sim.dt).round().max(1.0) as u64;
    let every = scn.sim.sample_every as u64;
    let initial_setpoints = sim.setpoints().to_vec();
    let mut samples = Vec::with_capacity((steps / every + 2) as usize);
    let mut fault = None;
    loop {
        let k = sim.step_count();
        if k % every == 0 {
            samples.push(sim.sample());
        }
        if k >= steps {
            break;
        }
        if let Err(e) = sim.advance() {
            fault = Some(e);
            break;
        }
    }
    if fault.is_none() && steps % every != 0 {
        samples.push(sim.sample());
    }
    Ok((
        Trajectory {
            samples,
            setpoint_changes: sim.setpoint_changes().to_vec(),
            infeasible_sharing: sim.infeasible_sharing(),
            initial_setpoints,
            final_setpoints: sim.setpoints().to_vec(),
        },
        fault,
    ))
}

/// Order-preserving dedup of the `--analysis` list.
fn unique(analyses: &[Analysis]) -> Vec<Analysis> {
    let mut seen = Vec::new();
    for &a in analyses {
        if !seen.contains(&a) {
            seen.push(a);
        }
    }
    seen
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_run(args: &RunArgs) -> i32 {
    let mut scn = match load_scenario(&args.scenario.scenario) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    apply_overrides(&mut scn, &args.overrides);
    if let Err(msg) = ensure_out_dir(&args.out.out) {
        eprintln!("error: {msg}");
        return EXIT_CONFIG;
    }

    let (traj, fault) = match collect(&scn) {
        Ok(pair) => pair,
        Err(e) => {
            // BadStart: nothing was simulated, so this is a scenario fault.
            eprintln!("error: scenario '{}': {e}", args.scenario.scenario);
            return EXIT_CONFIG;
        }
    };

    let mut summary = report::summary(&scn, &traj);
    if let Some(e) = &fault {
        summary = format!(
            "RUN FAILED: {e}\nartifacts cover the simulated span before the failure\n\n{summary}"
        );
    }
    let dir = &args.out.out;
    let mut written = vec!["trajectory.csv", "setpoints.jsonl", "summary.txt", "plot_trajectory.py"];
    let steps = [
        ("trajectory.csv", report::trajectory_csv(&traj)),
        ("setpoints.jsonl", report::setpoint_log(&traj)),
        ("summary.txt", summary.clone()),
        ("plot_trajectory.py", report::plot_script("trajectory.csv")),
    ];
    for (name, text) in &steps {
        if let Err(msg) = write_artifact(dir, name, text) {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    }
    for a in unique(&args.analysis) {
        match a {
            Analysis::Eigen => {
                // A failed eigen report is recorded in its artifact rather than
                // discarding the finished run.
                let text = match report::stability_report(&scn) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("warning: stability analysis failed: {e}");
                        format!("stability analysis failed: {e}\n")
                    }
                };
                if let Err(msg) = write_artifact(dir, "stability.txt", &text) {
                    eprintln!("error: {msg}");
                    return EXIT_CONFIG;
                }
                written.push("stability.txt");
            }
            Analysis::Envelope => {
                let text = report::envelope_report(&scn, Some(&traj));
                if let Err(msg) = write_artifact(dir, "envelope.txt", &text) {
                    eprintln!("error: {msg}");
                    return EXIT_CONFIG;
                }
                written.push("envelope.txt");
            }
        }
    }

    print!("{summary}");
    println!("artifacts in {}: {}", dir.display(), written.join(", "));
    if let Some(e) = fault {
        eprintln!("error: {e}");
        return EXIT_DIVERGED;
    }
    if traj.infeasible_sharing {
        eprintln!("note: at least one re-dispatch plan was abandoned; see setpoints.jsonl");
        return EXIT_INFEASIBLE;
    }
    EXIT_OK
}

fn cmd_analyze(args: &AnalyzeArgs) -> i32 {
    let mut scn = match load_scenario(&args.scenario.scenario) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    apply_overrides(&mut scn, &args.overrides);
    if let Err(msg) = ensure_out_dir(&args.out.out) {
        eprintln!("error: {msg}");
        return EXIT_CONFIG;
    }
    for a in unique(&args.analysis) {
        let (name, text) = match a {
            Analysis::Eigen => match report::stability_report(&scn) {
                Ok(t) => ("stability.txt", t),
                Err(e) => {
                    eprintln!("error: scenario '{}': {e}", args.scenario.scenario);
                    return EXIT_CONFIG;
                }
            },
            Analysis::Envelope => ("envelope.txt", report::envelope_report(&scn, None)),
        };
        if let Err(msg) = write_artifact(&args.out.out, name, &text) {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
        print!("{text}");
    }
    EXIT_OK
}

fn cmd_validate(args: &ValidateArgs) -> i32 {
    match load_scenario(&args.scenario.scenario) {
        Ok(scn) => {
            let mode = match scn.sim.mode {
                RectifierMode::Full => "full",
                RectifierMode::Fundamental => "fundamental",
            };
            println!(
                "ok: scenario '{}' — {} SST{}, horizon {} s at dt = {} s, {} mode",
                scn.name,
                scn.n(),
                if scn.n() == 1 { "" } else { "s" },
                scn.sim.t_end,
                scn.sim.dt,
                mode
            );
            EXIT_OK
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
    }
}

struct SeedOutcome {
    line: String,
    diverged: bool,
    infeasible: bool,
    config_fault: bool,
}

fn cmd_sweep(args: &SweepArgs) -> i32 {
    let mut scn = match load_scenario(&args.scenario.scenario) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    apply_overrides(&mut scn, &args.overrides);
    if let Err(msg) = ensure_out_dir(&args.out.out) {
        eprintln!("error: {msg}");
        return EXIT_CONFIG;
    }

    let count = args.seeds;
    let base = scn.sim.seed;
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get() as u64).min(count);
    let results: Mutex<Vec<Option<SeedOutcome>>> =
        Mutex::new((0..count).map(|_| None).collect());
    let dir = args.out.out.as_path();
    let scn = &scn;
    let results_ref = &results;
    std::thread::scope(|scope| {
        for w in 0..workers {
            scope.spawn(move || {
                for k in (w..count).step_by(workers as usize) {
                    let mut case = scn.clone();
                    case.sim.seed = base + k;
                    let outcome = run_one_seed(&case, dir);
                    results_ref.lock().unwrap()[k as usize] = Some(outcome);
                }
            });
        }
    });

    let outcomes: Vec<SeedOutcome> =
        results.lock().unwrap().drain(..).map(|o| o.expect("worker filled its slot")).collect();
    let mut out = format!(
        "sweep: scenario '{}', seeds {}..={} ({} runs)\n",
        scn.name,
        base,
        base + count - 1,
        count
    );
    for o in &outcomes {
        out.push_str(&o.line);
        out.push('\n');
    }
    if let Err(msg) = write_artifact(dir, "sweep_summary.txt", &out) {
        eprintln!("error: {msg}");
        return EXIT_CONFIG;
    }
    print!("{out}");
    if outcomes.iter().any(|o| o.config_fault) {
        EXIT_CONFIG
    } else if outcomes.iter().any(|o| o.diverged) {
        EXIT_DIVERGED
    } else if outcomes.iter().any(|o| o.infeasible) {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    }
}

fn run_one_seed(case: &Scenario, dir: &Path) -> SeedOutcome {
    let seed = case.sim.seed;
    let (traj, fault) = match collect(case) {
        Ok(pair) => pair,
        Err(e) => {
            return SeedOutcome {
                line: format!("seed {seed}: cannot start — {e}"),
                diverged: false,
                infeasible: false,
                config_fault: true,
            };
        }
    };
    let csv_name = format!("trajectory_seed{seed}.csv");
    if let Err(msg) = write_artifact(dir, &csv_name, &report::trajectory_csv(&traj)) {
        return SeedOutcome {
            line: format!("seed {seed}: {msg}"),
            diverged: false,
            infeasible: false,
            config_fault: true,
        };
    }
    let max_delta = traj
        .samples
        .iter()
        .flat_map(|s| s.sst.iter().map(|r| r.delta.abs()))
        .fold(0.0_f64, f64::max);
    let redispatches = traj.setpoint_changes.len();
    let line = match &fault {
        Some(e) => format!("seed {seed}: DIVERGED — {e} ({csv_name} covers the span before)"),
        None if traj.infeasible_sharing => format!(
            "seed {seed}: infeasible re-dispatch — max |delta| {max_delta:.3e} A, {redispatches} plan(s) logged"
        ),
        None => format!(
            "seed {seed}: ok — max |delta| {max_delta:.3e} A, {redispatches} re-dispatch(es)"
        ),
    };
    SeedOutcome {
        line,
        diverged: fault.is_some(),
        infeasible: traj.infeasible_sharing,
        config_fault: false,
    }
}
