//! Sweep drivers for the two experiments (local steps `h`, machine count `M`),
//! their file outputs, and reproducible manifests.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{build_shards, Shots};
use crate::error::{invalid, Error, Result};
use crate::sfgd::{run, Budget, Init, Mode, RunConfig, RunOutput, RunTrace, StepSchedule, TraceEntry};
use crate::states::TargetSpec;

pub const H_VALUES: [usize; 6] = [1, 10, 25, 50, 100, 200];
pub const M_VALUES: [usize; 4] = [5, 10, 15, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "fig1-top")]
    Fig1Top,
    #[serde(rename = "fig1-bottom")]
    Fig1Bottom,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Fig1Top => "fig1-top",
            Preset::Fig1Bottom => "fig1-bottom",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1-top" => Ok(Preset::Fig1Top),
            "fig1-bottom" => Ok(Preset::Fig1Bottom),
            other => Err(invalid(format!("unknown preset {other:?} (expected fig1-top or fig1-bottom)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    LocalSteps,
    Workers,
}

impl SweepVar {
    fn label(&self) -> &'static str {
        match self {
            SweepVar::LocalSteps => "h",
            SweepVar::Workers => "m",
        }
    }

    fn apply(&self, config: &mut RunConfig, value: usize) {
        match self {
            SweepVar::LocalSteps => config.local_steps = value,
            SweepVar::Workers => config.workers = value,
        }
    }
}

/// A sweep over one `RunConfig` field with seed-replicated cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub preset: Option<Preset>,
    pub base: RunConfig,
    pub target: TargetSpec,
    pub sweep: SweepVar,
    pub values: Vec<usize>,
    pub reps: usize,
    /// Accuracy level for rounds-to-threshold.
    pub threshold: f64,
}

impl ExperimentSpec {
    /// Both presets use a 6-qubit GHZ target and the gradient initialization
    /// `−∇f(0)`, so curves start far from the target.
    pub fn preset(preset: Preset) -> Self {
        let base = RunConfig {
            qubits: 6,
            rank: 1,
            workers: 10,
            local_steps: 1,
            batch_size: 50,
            measurements_per_worker: 200,
            budget: Budget::Rounds(100),
            schedule: StepSchedule::Constant { eta: 1.0 },
            shots: Shots::Finite(1024),
            seed: 0,
            mode: Mode::Local,
            record_every: 1,
            include_identity: false,
            init: Init::Gradient,
            execution: Default::default(),
        };
        let (sweep, values, base) = match preset {
            Preset::Fig1Top => (SweepVar::LocalSteps, H_VALUES.to_vec(), base),
            Preset::Fig1Bottom => (
                SweepVar::Workers,
                M_VALUES.to_vec(),
                RunConfig { local_steps: 20, ..base },
            ),
        };
        Self {
            preset: Some(preset),
            target: TargetSpec::Ghz { qubits: base.qubits },
            base,
            sweep,
            values,
            reps: 5,
            threshold: 0.05,
        }
    }

    /// Checks every cell's configuration before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("sweep values must be nonempty"));
        }
        if self.reps == 0 {
            return Err(invalid("need at least one repetition"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(invalid(format!("threshold {} must be finite and nonnegative", self.threshold)));
        }
        if self.target.qubits() != self.base.qubits {
            return Err(invalid(format!(
                "target on {} qubits, runs on {}",
                self.target.qubits(),
                self.base.qubits
            )));
        }
        for &v in &self.values {
            self.cell_config(v, 0).validate()?;
        }
        Ok(())
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.base.seed.wrapping_add(rep as u64)
    }

    /// Configuration of one cell. Repetition `k` uses the same seed for every sweep
    /// value, so sweeping `h` reuses the data of each repetition.
    pub fn cell_config(&self, value: usize, rep: usize) -> RunConfig {
        let mut config = self.base.clone();
        self.sweep.apply(&mut config, value);
        config.seed = self.rep_seed(rep);
        config
    }
}

#[derive(Clone, Debug)]
pub struct CellRun {
    pub rep: usize,
    pub seed: u64,
    /// Errors are kept per cell; the sweep continues past them.
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: usize,
    pub runs: Vec<CellRun>,
    /// Per-round median over repetitions.
    pub median: RunTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub value: usize,
    pub per_rep: Vec<Option<usize>>,
    /// `None` when the median repetition never reaches the threshold.
    pub median: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub spec: ExperimentSpec,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, value: usize) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value)
    }

    pub fn any_diverged(&self) -> bool {
        self.points
            .iter()
            .flat_map(|p| &p.runs)
            .any(|r| matches!(&r.outcome, Ok(out) if out.diverged()))
    }

    pub fn errors(&self) -> Vec<String> {
        self.points
            .iter()
            .flat_map(|p| p.runs.iter().map(move |r| (p.value, r)))
            .filter_map(|(v, r)| {
                r.outcome
                    .as_ref()
                    .err()
                    .map(|e| format!("{}={v} rep {}: {e}", self.spec.sweep.label(), r.rep))
            })
            .collect()
    }

    /// First round with `ε ≤ threshold`, round 0 being the initialization.
    pub fn rounds_to_threshold(&self, threshold: f64) -> Vec<ThresholdRow> {
        self.points
            .iter()
            .map(|p| {
                let per_rep: Vec<Option<usize>> = p
                    .runs
                    .iter()
                    .map(|r| r.outcome.as_ref().ok().and_then(|out| first_round_below(&out.trace, threshold)))
                    .collect();
                let as_f64: Vec<f64> = per_rep
                    .iter()
                    .map(|r| r.map_or(f64::INFINITY, |x| x as f64))
                    .collect();
                let m = median(as_f64);
                ThresholdRow {
                    value: p.value,
                    per_rep,
                    median: m.filter(|x| x.is_finite()),
                }
            })
            .collect()
    }
}

pub fn first_round_below(trace: &RunTrace, threshold: f64) -> Option<usize> {
    trace
        .entries
        .iter()
        .find(|e| e.epsilon.is_some_and(|x| x <= threshold))
        .map(|e| e.round)
}

/// Median of the finite-or-infinite values; the mean of the middle pair for even counts.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    })
}

fn median_trace(outputs: &[&RunOutput]) -> RunTrace {
    let len = outputs.iter().map(|o| o.trace.entries.len()).max().unwrap_or(0);
    let entries = (0..len)
        .map(|j| {
            let rows: Vec<&TraceEntry> = outputs.iter().filter_map(|o| o.trace.entries.get(j)).collect();
            let med = |f: &dyn Fn(&TraceEntry) -> Option<f64>| median(rows.iter().filter_map(|e| f(e)).collect());
            TraceEntry {
                round: rows[0].round,
                iter: rows[0].iter,
                eta: rows[0].eta,
                epsilon: med(&|e| e.epsilon),
                d2: med(&|e| e.d2),
                drift: med(&|e| Some(e.drift)).unwrap_or(0.0),
                objective: med(&|e| Some(e.objective)).unwrap_or(0.0),
                seconds: med(&|e| Some(e.seconds)).unwrap_or(0.0),
            }
        })
        .collect();
    RunTrace { entries }
}

fn run_cell(spec: &ExperimentSpec, value: usize, rep: usize) -> CellRun {
    let config = spec.cell_config(value, rep);
    let outcome = (|| {
        let target = spec.target.build()?;
        let shards = build_shards(&config.dataset(), &target)?;
        run(&config, &shards, Some(&target))
    })()
    .map_err(|e| e.to_string());
    CellRun {
        rep,
        seed: config.seed,
        outcome,
    }
}

fn run_cells(spec: &ExperimentSpec) -> Vec<CellRun> {
    let cells: Vec<(usize, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.reps).map(move |k| (v, k)))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cells.par_iter().map(|&(v, k)| run_cell(spec, v, k)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cells.iter().map(|&(v, k)| run_cell(spec, v, k)).collect()
    }
}

/// Runs every `(value, repetition)` cell and aggregates per value.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut runs = run_cells(spec).into_iter();
    let points = spec
        .values
        .iter()
        .map(|&value| {
            let runs: Vec<CellRun> = runs.by_ref().take(spec.reps).collect();
            let ok: Vec<&RunOutput> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            SweepPoint {
                value,
                median: median_trace(&ok),
                runs,
            }
        })
        .collect();
    Ok(SweepResult {
        spec: spec.clone(),
        points,
    })
}

pub fn run_h_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    if spec.sweep != SweepVar::LocalSteps {
        return Err(invalid("an h-sweep must vary local_steps"));
    }
    run_sweep(spec)
}

pub fn run_m_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    if spec.sweep != SweepVar::Workers {
        return Err(invalid("an M-sweep must vary workers"));
    }
    run_sweep(spec)
}

/// Everything needed to regenerate an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifest {
    Run {
        config: RunConfig,
        target: TargetSpec,
        timing: bool,
    },
    Sweep {
        spec: ExperimentSpec,
        timing: bool,
    },
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes through a temporary sibling and renames, so readers never see partial files.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn strip_timing(trace: &RunTrace, timing: bool) -> RunTrace {
    let mut trace = trace.clone();
    if !timing {
        trace.entries.iter_mut().for_each(|e| e.seconds = 0.0);
    }
    trace
}

/// `manifest.json` followed by one file per artifact; every CSV starts with the manifest as a comment.
pub fn write_run(dir: &Path, manifest: &Manifest, output: &RunOutput) -> Result<Vec<PathBuf>> {
    let Manifest::Run { timing, .. } = manifest else {
        return Err(invalid("write_run needs a run manifest"));
    };
    fs::create_dir_all(dir)?;
    let json = manifest.to_json()?;
    let mut written = Vec::new();
    let path = dir.join("manifest.json");
    write_atomic(&path, |w| Ok(w.write_all(json.as_bytes())?))?;
    written.push(path);
    let path = dir.join("trace.csv");
    let trace = strip_timing(&output.trace, *timing);
    write_atomic(&path, |w| trace.write_csv(w, Some(&json)))?;
    written.push(path);
    let path = dir.join("estimate.csv");
    write_atomic(&path, |w| output.estimate.write_csv(w))?;
    written.push(path);
    Ok(written)
}

pub fn write_sweep(dir: &Path, result: &SweepResult, timing: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let spec = &result.spec;
    let manifest = Manifest::Sweep {
        spec: spec.clone(),
        timing,
    };
    let json = manifest.to_json()?;
    let mut written = Vec::new();
    let path = dir.join("manifest.json");
    write_atomic(&path, |w| Ok(w.write_all(json.as_bytes())?))?;
    written.push(path);

    let label = spec.sweep.label();
    for point in &result.points {
        let config = spec.cell_config(point.value, 0);
        let seeds: Vec<u64> = point.runs.iter().map(|r| r.seed).collect();
        let preamble = format!(
            "median over {} repetitions, seeds {seeds:?}\nconfig {}\nmanifest {}",
            spec.reps,
            serde_json::to_string(&config)?,
            serde_json::to_string(&manifest)?
        );
        let path = dir.join(format!("trace_{label}{}.csv", point.value));
        let trace = strip_timing(&point.median, timing);
        write_atomic(&path, |w| trace.write_csv(w, Some(&preamble)))?;
        written.push(path);
    }

    let preamble = format!("manifest {}", serde_json::to_string(&manifest)?);
    match spec.sweep {
        SweepVar::LocalSteps => {
            let path = dir.join("summary.csv");
            write_atomic(&path, |w| write_epsilon_table(w, result, &preamble))?;
            written.push(path);
        }
        SweepVar::Workers => {
            let path = dir.join("rounds_to_threshold.csv");
            let rows = result.rounds_to_threshold(spec.threshold);
            write_atomic(&path, |w| write_threshold_table(w, &rows, spec.threshold, &preamble))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Median `ε` per synchronization round, one column per sweep value.
pub fn write_epsilon_table(w: &mut dyn Write, result: &SweepResult, preamble: &str) -> Result<()> {
    for line in preamble.lines() {
        writeln!(w, "# {line}")?;
    }
    let label = result.spec.sweep.label();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["round".to_string()];
    header.extend(result.points.iter().map(|p| format!("{label}{}", p.value)));
    out.write_record(&header)?;
    let rounds = result.points.iter().map(|p| p.median.entries.len()).max().unwrap_or(0);
    for j in 0..rounds {
        let round = result
            .points
            .iter()
            .find_map(|p| p.median.entries.get(j).map(|e| e.round))
            .unwrap_or(j);
        let mut row = vec![round.to_string()];
        row.extend(
            result
                .points
                .iter()
                .map(|p| fmt_opt(p.median.entries.get(j).and_then(|e| e.epsilon))),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_threshold_table(w: &mut dyn Write, rows: &[ThresholdRow], threshold: f64, preamble: &str) -> Result<()> {
    for line in preamble.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "# threshold {threshold}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["workers", "median_rounds", "reached", "per_rep"])?;
    for row in rows {
        let per_rep: Vec<String> = row
            .per_rep
            .iter()
            .map(|r| r.map_or_else(|| "-".to_string(), |x| x.to_string()))
            .collect();
        out.write_record([
            row.value.to_string(),
            row.median.map_or_else(|| "not reached".to_string(), |m| m.to_string()),
            row.per_rep.iter().filter(|r| r.is_some()).count().to_string(),
            per_rep.join(";"),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Re-executes a manifest into `dir`. Returns whether any run diverged.
pub fn run_manifest(manifest: &Manifest, dir: &Path) -> Result<bool> {
    match manifest {
        Manifest::Run { config, target, .. } => {
            let t = target.build()?;
            let shards = build_shards(&config.dataset(), &t)?;
            let output = run(config, &shards, Some(&t))?;
            write_run(dir, manifest, &output)?;
            Ok(output.diverged())
        }
        Manifest::Sweep { spec, timing } => {
            let result = run_sweep(spec)?;
            write_sweep(dir, &result, *timing)?;
            Ok(result.any_diverged())
        }
    }
}
