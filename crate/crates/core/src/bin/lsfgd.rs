use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, ValueEnum};

use lsfgd_core::data::{build_shards, read_dataset, write_dataset, Shots, WorkerShard};
use lsfgd_core::experiment::{
    run_manifest, run_sweep, write_epsilon_table, write_run, write_sweep, write_threshold_table, ExperimentSpec,
    Manifest, Preset, SweepResult, SweepVar,
};
use lsfgd_core::sfgd::{alpha_from_target, run, Budget, Execution, Init, Mode, RunConfig, RunStatus, StepSchedule};
use lsfgd_core::states::TargetSpec;
use lsfgd_core::validate::{parse_suites, run_validation, ValidationOptions};
use lsfgd_core::Error;

const EXIT_DIVERGED: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_SOFTWARE: u8 = 70;
const EXIT_IO: u8 = 74;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Fgd,
    Sfgd,
    Local,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Constant,
    Diminishing,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Ghz,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Spectral,
    Gradient,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    #[value(name = "fig1-top")]
    Fig1Top,
    #[value(name = "fig1-bottom")]
    Fig1Bottom,
}

/// Local stochastic factored gradient descent for quantum state tomography.
///
/// Without --preset, --validate or --manifest a single run is performed on a
/// simulated GHZ (or random) target. Flags override preset values; flags that a
/// mode cannot honor are rejected rather than ignored.
///
/// The environment variable LSFGD_THREADS sets the worker thread count.
#[derive(Debug, Parser)]
#[command(name = "lsfgd", version)]
#[command(group(ArgGroup::new("budget").args(["rounds", "total_steps"])))]
#[command(group(ArgGroup::new("action").args(["preset", "validate", "manifest"])))]
struct Cli {
    /// Number of qubits n.
    #[arg(long)]
    qubits: Option<usize>,
    /// Rank r of the estimated factor.
    #[arg(long)]
    rank: Option<usize>,
    /// Number of machines M.
    #[arg(long)]
    workers: Option<usize>,
    /// Local steps h between synchronizations.
    #[arg(long)]
    local_steps: Option<usize>,
    /// Batch size b.
    #[arg(long)]
    batch: Option<usize>,
    /// Measurements held by each machine.
    #[arg(long)]
    measurements: Option<usize>,
    /// Budget as synchronization rounds (FGD: iterations).
    #[arg(long)]
    rounds: Option<usize>,
    /// Budget as total local iterations.
    #[arg(long)]
    total_steps: Option<usize>,
    /// Constant step size.
    #[arg(long, conflicts_with = "alpha")]
    eta: Option<f64>,
    /// Diminishing schedule η_t = 2/(α(t+2)); defaults to 0.3·σ_r of the target.
    #[arg(long)]
    alpha: Option<f64>,
    /// Step-size schedule; diminishing is implied by --alpha.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Shots per measurement, or "exact".
    #[arg(long)]
    shots: Option<Shots>,
    /// Master seed for measurements and batches.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per sweep value (presets only).
    #[arg(long)]
    reps: Option<usize>,
    /// Accuracy threshold for rounds-to-threshold (presets only).
    #[arg(long)]
    threshold: Option<f64>,
    /// Run an experiment sweep: h for fig1-top, M for fig1-bottom.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory; without it results go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// local: h local steps per round; sfgd: h = 1; fgd: full-batch on pooled data.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Allow the identity string among sampled measurements.
    #[arg(long)]
    include_identity: bool,
    /// Initial factor: spectral, or the same scaled by 1/√d.
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Record metrics every this many rounds.
    #[arg(long)]
    record_every: Option<usize>,
    /// Target state to simulate.
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Rank of a random target.
    #[arg(long, requires = "target")]
    target_rank: Option<usize>,
    /// Seed of a random target.
    #[arg(long, requires = "target")]
    target_seed: Option<u64>,
    /// Run validation suites: all, or a comma-separated list of oracle, gradient, procrustes, schedule.
    #[arg(long, value_name = "SUITE")]
    validate: Option<String>,
    /// Corrupt the Pauli phase during validation (negative control).
    #[arg(long, requires = "validate")]
    inject_fault: bool,
    /// Write zeros in the seconds column so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Step workers one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
    /// Re-run an emitted manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Load measurements from a dataset directory instead of simulating them.
    #[arg(long, conflicts_with_all = ["preset", "validate", "manifest"])]
    data: Option<PathBuf>,
    /// Also write the simulated dataset to OUT/data.
    #[arg(long, requires = "out")]
    save_data: bool,
}

struct Usage(String);

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

fn reject(flag: &str, given: bool, context: &str) -> Result<(), Usage> {
    if given {
        Err(Usage(format!("--{flag} does not apply {context}")))
    } else {
        Ok(())
    }
}

impl Cli {
    /// Flags that configure a run, as (name, given).
    fn run_flags(&self) -> Vec<(&'static str, bool)> {
        vec![
            ("qubits", self.qubits.is_some()),
            ("rank", self.rank.is_some()),
            ("workers", self.workers.is_some()),
            ("local-steps", self.local_steps.is_some()),
            ("batch", self.batch.is_some()),
            ("measurements", self.measurements.is_some()),
            ("rounds", self.rounds.is_some()),
            ("total-steps", self.total_steps.is_some()),
            ("eta", self.eta.is_some()),
            ("alpha", self.alpha.is_some()),
            ("schedule", self.schedule.is_some()),
            ("shots", self.shots.is_some()),
            ("mode", self.mode.is_some()),
            ("include-identity", self.include_identity),
            ("init", self.init.is_some()),
            ("record-every", self.record_every.is_some()),
            ("target", self.target.is_some()),
            ("sequential", self.sequential),
        ]
    }

    fn target_spec(&self, qubits: usize) -> TargetSpec {
        match self.target {
            None | Some(TargetArg::Ghz) => TargetSpec::Ghz { qubits },
            Some(TargetArg::Random) => TargetSpec::Random {
                qubits,
                rank: self.target_rank.unwrap_or(1),
                seed: self.target_seed.unwrap_or(0),
            },
        }
    }

    /// Applies every explicitly given flag to `config`.
    fn apply(&self, config: &mut RunConfig, target: &TargetSpec) -> Result<(), Failure> {
        if let Some(v) = self.qubits {
            config.qubits = v;
        }
        if let Some(v) = self.rank {
            config.rank = v;
        }
        if let Some(v) = self.workers {
            config.workers = v;
        }
        if let Some(v) = self.local_steps {
            config.local_steps = v;
        }
        if let Some(v) = self.batch {
            config.batch_size = v;
        }
        if let Some(v) = self.measurements {
            config.measurements_per_worker = v;
        }
        if let Some(v) = self.rounds {
            config.budget = Budget::Rounds(v);
        }
        if let Some(v) = self.total_steps {
            config.budget = Budget::TotalSteps(v);
        }
        if let Some(v) = self.shots {
            config.shots = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(m) = self.mode {
            config.mode = match m {
                ModeArg::Fgd => Mode::Fgd,
                ModeArg::Sfgd => Mode::Sfgd,
                ModeArg::Local => Mode::Local,
            };
        }
        if self.include_identity {
            config.include_identity = true;
        }
        if let Some(i) = self.init {
            config.init = match i {
                InitArg::Spectral => Init::Spectral,
                InitArg::Gradient => Init::Gradient,
            };
        }
        if let Some(v) = self.record_every {
            config.record_every = v;
        }
        if self.sequential {
            config.execution = Execution::Sequential;
        }
        let diminishing = match self.schedule {
            Some(ScheduleArg::Diminishing) => true,
            Some(ScheduleArg::Constant) => false,
            None => self.alpha.is_some(),
        };
        if diminishing {
            if self.eta.is_some() {
                return Err(Usage("--eta sets a constant step; use --alpha with the diminishing schedule".into()).into());
            }
            let alpha = match self.alpha {
                Some(a) => a,
                None => alpha_from_target(&target.build()?),
            };
            config.schedule = StepSchedule::Diminishing { alpha };
        } else {
            if self.alpha.is_some() {
                return Err(Usage("--alpha needs --schedule diminishing".into()).into());
            }
            if let Some(eta) = self.eta {
                config.schedule = StepSchedule::Constant { eta };
            }
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidArgument(_)
                | Error::DimensionMismatch(_)
                | Error::SizeCap { .. }
                | Error::Unnormalized(_) => EXIT_USAGE,
                Error::Io(_) => EXIT_IO,
                _ => EXIT_SOFTWARE,
            })
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("LSFGD_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| format!("LSFGD_THREADS={value:?} is not a thread count"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    if let Some(suites) = &cli.validate {
        return validate(cli, suites);
    }
    if let Some(path) = &cli.manifest {
        return replay(cli, path);
    }
    if let Some(preset) = cli.preset {
        let preset = match preset {
            PresetArg::Fig1Top => Preset::Fig1Top,
            PresetArg::Fig1Bottom => Preset::Fig1Bottom,
        };
        return sweep(cli, preset);
    }
    single(cli)
}

fn validate(cli: &Cli, suites: &str) -> Result<u8, Failure> {
    for (flag, given) in cli.run_flags() {
        reject(flag, given, "to --validate")?;
    }
    reject("reps", cli.reps.is_some(), "to --validate")?;
    reject("threshold", cli.threshold.is_some(), "to --validate")?;
    reject("out", cli.out.is_some(), "to --validate")?;
    let suites = parse_suites(suites).map_err(|e| Usage(e.to_string()))?;
    let opts = ValidationOptions {
        seed: cli.seed.unwrap_or(0),
        inject_fault: cli.inject_fault,
        ..ValidationOptions::default()
    };
    let report = run_validation(&suites, &opts)?;
    print!("{report}");
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(0)
    } else {
        println!("{} of {} checks failed", report.failures().count(), report.checks.len());
        Ok(EXIT_VALIDATION)
    }
}

fn replay(cli: &Cli, path: &std::path::Path) -> Result<u8, Failure> {
    for (flag, given) in cli.run_flags() {
        reject(flag, given, "to --manifest (the manifest fixes the configuration)")?;
    }
    reject("seed", cli.seed.is_some(), "to --manifest")?;
    reject("reps", cli.reps.is_some(), "to --manifest")?;
    reject("threshold", cli.threshold.is_some(), "to --manifest")?;
    reject("no-timing", cli.no_timing, "to --manifest")?;
    let Some(out) = &cli.out else {
        return Err(Usage("--manifest needs --out".into()).into());
    };
    let manifest = Manifest::read(path)?;
    let diverged = run_manifest(&manifest, out)?;
    eprintln!("wrote {}", out.display());
    Ok(if diverged { EXIT_DIVERGED } else { 0 })
}

fn sweep(cli: &Cli, preset: Preset) -> Result<u8, Failure> {
    let mut spec = ExperimentSpec::preset(preset);
    let swept = match spec.sweep {
        SweepVar::LocalSteps => ("local-steps", cli.local_steps.is_some()),
        SweepVar::Workers => ("workers", cli.workers.is_some()),
    };
    reject(swept.0, swept.1, &format!("to --preset {preset}, which sweeps it"))?;
    reject("save-data", cli.save_data, "to sweeps")?;
    let qubits = cli.qubits.unwrap_or(spec.base.qubits);
    let target = cli.target_spec(qubits);
    cli.apply(&mut spec.base, &target)?;
    spec.target = target;
    if let Some(r) = cli.reps {
        spec.reps = r;
    }
    if let Some(t) = cli.threshold {
        spec.threshold = t;
    }
    spec.validate()?;
    let timing = !cli.no_timing;
    let result = run_sweep(&spec)?;
    for e in result.errors() {
        eprintln!("warning: {e}");
    }
    match &cli.out {
        Some(dir) => {
            let files = write_sweep(dir, &result, timing)?;
            eprintln!("wrote {} files to {}", files.len(), dir.display());
        }
        None => print_sweep(&result)?,
    }
    Ok(if result.any_diverged() { EXIT_DIVERGED } else { 0 })
}

fn print_sweep(result: &SweepResult) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let preamble = format!("preset {:?}", result.spec.preset.map(|p| p.to_string()));
    match result.spec.sweep {
        SweepVar::LocalSteps => write_epsilon_table(&mut w, result, &preamble)?,
        SweepVar::Workers => {
            let rows = result.rounds_to_threshold(result.spec.threshold);
            write_threshold_table(&mut w, &rows, result.spec.threshold, &preamble)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn single(cli: &Cli) -> Result<u8, Failure> {
    reject("reps", cli.reps.is_some(), "to a single run")?;
    reject("threshold", cli.threshold.is_some(), "to a single run")?;
    let mut config = RunConfig::default();
    let (target, shards): (TargetSpec, Option<Vec<WorkerShard>>) = match &cli.data {
        Some(dir) => {
            for flag in ["qubits", "workers", "measurements", "shots", "include-identity", "target"] {
                let given = cli.run_flags().iter().any(|&(f, g)| f == flag && g);
                reject(flag, given, "to --data (the dataset fixes it)")?;
            }
            reject("seed", cli.seed.is_some(), "to --data (the dataset fixes it)")?;
            reject("save-data", cli.save_data, "to --data")?;
            let (manifest, shards) = read_dataset(dir)?;
            let d = &manifest.config;
            config.qubits = d.qubits;
            config.workers = d.workers;
            config.measurements_per_worker = d.measurements_per_worker;
            config.shots = d.shots;
            config.seed = d.seed;
            config.include_identity = d.include_identity;
            (manifest.target, Some(shards))
        }
        None => {
            let qubits = cli.qubits.unwrap_or(config.qubits);
            (cli.target_spec(qubits), None)
        }
    };
    cli.apply(&mut config, &target)?;
    config.validate()?;
    let target_factor = target.build()?;
    let shards = match shards {
        Some(s) => s,
        None => build_shards(&config.dataset(), &target_factor)?,
    };
    let output = run(&config, &shards, Some(&target_factor))?;
    let manifest = Manifest::Run {
        config: config.clone(),
        target: target.clone(),
        timing: !cli.no_timing,
    };
    match &cli.out {
        Some(dir) => {
            write_run(dir, &manifest, &output)?;
            if cli.save_data {
                write_dataset(&dir.join("data"), &config.dataset(), &target, &shards)?;
            }
            eprintln!("wrote {}", dir.display());
        }
        None => {
            let mut trace = output.trace.clone();
            if cli.no_timing {
                trace.entries.iter_mut().for_each(|e| e.seconds = 0.0);
            }
            trace.write_csv(io::stdout().lock(), Some(&manifest.to_json()?))?;
        }
    }
    if let Some(last) = output.trace.last() {
        eprintln!(
            "round {} iter {}: epsilon {} objective {:e}",
            last.round,
            last.iter,
            last.epsilon.map_or("-".into(), |e| format!("{e:e}")),
            last.objective
        );
    }
    match output.status {
        RunStatus::Completed => Ok(0),
        RunStatus::Diverged { iteration, reason } => {
            eprintln!("diverged at iteration {iteration}: {reason}");
            Ok(EXIT_DIVERGED)
        }
    }
}
