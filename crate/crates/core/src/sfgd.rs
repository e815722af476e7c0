//! Factored gradient descent on `ρ = U U^†`: the full-batch, stochastic and
//! local (periodically averaged, multi-worker) variants.
//!
//! Gradients follow the convention that the factor 2 of the Euclidean
//! gradient is absorbed into the step size:
//! `g(U) = (1/b) Σ_k (Tr(A_k U U^†) − y_k) A_k U`, so `dG(U)[Δ] = 2 Re⟨g, Δ⟩`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetConfig, MeasurementRecord, Shots, WorkerShard};
use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::linalg::{gram, padded_distance_sq, top_r_psd_factor, top_r_psd_factor_operator, LanczosOptions};
use crate::pauli::{accumulate_weighted, expectation_unchecked, PauliSum, DENSE_QUBIT_CAP};
use crate::states::{recon_error, DensityFactor};
use crate::CMatrix;

/// A run is declared diverged once `‖U‖_F²` exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `η_t = 2 / (α (t + 2))`.
    Diminishing { alpha: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { eta } if !(eta.is_finite() && eta >= 0.0) => {
                Err(invalid(format!("step size {eta} must be finite and nonnegative")))
            }
            StepSchedule::Diminishing { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                Err(invalid(format!("alpha {alpha} must be finite and positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn step_size(&self, t: usize) -> Result<f64> {
        self.validate()?;
        Ok(self.eta_unchecked(t))
    }

    fn eta_unchecked(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Diminishing { alpha } => 2.0 / (alpha * (t as f64 + 2.0)),
        }
    }
}

pub fn step_size(schedule: &StepSchedule, t: usize) -> Result<f64> {
    schedule.step_size(t)
}

/// Averaging every `h` local steps: iteration `t` ends with a synchronization
/// when `(t + 1) mod h = 0`, so round `p` completes after iteration `p·h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncSchedule {
    h: usize,
}

impl SyncSchedule {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(invalid("local steps between synchronizations must be at least 1"));
        }
        Ok(Self { h })
    }

    pub fn local_steps(&self) -> usize {
        self.h
    }

    pub fn is_sync(&self, t: usize) -> bool {
        (t + 1).is_multiple_of(self.h)
    }

    /// Averaging events in `total_steps` iterations.
    pub fn rounds(&self, total_steps: usize) -> usize {
        total_steps / self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full-batch gradient descent on the pooled data.
    Fgd,
    /// Parallel minibatch SFGD: every worker synchronizes after every step.
    Sfgd,
    /// Local SFGD with `local_steps` steps between synchronizations.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// A fixed number of synchronization rounds, `T = P·h`.
    Rounds(usize),
    TotalSteps(usize),
}

/// Scaling of the back-projected data before extracting the top-`r` factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `S = (d/m) Σ_k y_k A_k`, exact on a complete Pauli dataset.
    #[default]
    Spectral,
    /// `S = −∇f(0) = (1/m) Σ_k y_k A_k`, which lands on `ρ*/d`: a distant start.
    Gradient,
}

impl Init {
    fn weight(&self, d: usize, m: usize) -> f64 {
        match self {
            Init::Spectral => d as f64 / m as f64,
            Init::Gradient => 1.0 / m as f64,
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Init::Spectral => "spectral",
            Init::Gradient => "gradient",
        })
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Init::Spectral),
            "gradient" => Ok(Init::Gradient),
            other => Err(invalid(format!("unknown init {other:?} (expected spectral or gradient)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Everything needed to reproduce a run, including its dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub qubits: usize,
    pub rank: usize,
    pub workers: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub measurements_per_worker: usize,
    pub budget: Budget,
    pub schedule: StepSchedule,
    pub shots: Shots,
    pub seed: u64,
    pub mode: Mode,
    /// Record metrics every this many synchronization rounds (FGD: iterations).
    pub record_every: usize,
    #[serde(default)]
    pub include_identity: bool,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            qubits: 3,
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
            init: Init::Spectral,
            execution: Execution::Parallel,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.qubits == 0 || self.qubits > crate::pauli::MAX_QUBITS {
            return Err(invalid(format!("qubit count {} out of range", self.qubits)));
        }
        if self.rank == 0 || self.rank > 1 << self.qubits {
            return Err(invalid(format!("rank {} out of range", self.rank)));
        }
        if self.workers == 0 {
            return Err(invalid("need at least one worker"));
        }
        SyncSchedule::new(self.local_steps)?;
        if self.batch_size == 0 || self.batch_size > self.measurements_per_worker {
            return Err(invalid(format!(
                "batch size {} must lie in [1, {}] (measurements per worker)",
                self.batch_size, self.measurements_per_worker
            )));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        self.schedule.validate()
    }

    /// Local steps between averages after applying the mode.
    pub fn effective_local_steps(&self) -> usize {
        match self.mode {
            Mode::Local => self.local_steps,
            Mode::Sfgd | Mode::Fgd => 1,
        }
    }

    pub fn total_steps(&self) -> usize {
        match self.budget {
            Budget::Rounds(p) => p * self.effective_local_steps(),
            Budget::TotalSteps(t) => t,
        }
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            qubits: self.qubits,
            workers: self.workers,
            measurements_per_worker: self.measurements_per_worker,
            shots: self.shots,
            seed: self.seed,
            include_identity: self.include_identity,
        }
    }
}

/// Metrics at one synchronization round, measured on the worker average after averaging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub iter: usize,
    pub eta: f64,
    /// `‖Û Û^† − ρ*‖_F²`.
    pub epsilon: Option<f64>,
    /// Squared Procrustes distance `D²(Û, U*)`.
    pub d2: Option<f64>,
    /// `(1/M) Σ_i ‖Û − U^i‖_F²` over the local iterates entering the synchronization step.
    pub drift: f64,
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub entries: Vec<TraceEntry>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|e| e.epsilon).collect()
    }

    /// Bitwise equality of every column except wall time.
    pub fn same_metrics(&self, other: &RunTrace) -> bool {
        let bits = |x: Option<f64>| x.map(f64::to_bits);
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.round == b.round
                    && a.iter == b.iter
                    && a.eta.to_bits() == b.eta.to_bits()
                    && bits(a.epsilon) == bits(b.epsilon)
                    && bits(a.d2) == bits(b.d2)
                    && a.drift.to_bits() == b.drift.to_bits()
                    && a.objective.to_bits() == b.objective.to_bits()
            })
    }

    /// CSV with columns `round,iter,eta,epsilon,d2,drift,objective,seconds`. Each line of
    /// `preamble` is written first as a `#` comment.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: Option<&str>) -> Result<()> {
        if let Some(text) = preamble {
            for line in text.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut out = csv::Writer::from_writer(w);
        for entry in &self.entries {
            out.serialize(entry)?;
        }
        if self.entries.is_empty() {
            out.write_record(["round", "iter", "eta", "epsilon", "d2", "drift", "objective", "seconds"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let entries = reader.deserialize().collect::<std::result::Result<Vec<TraceEntry>, _>>()?;
        Ok(Self { entries })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { iteration: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: RunTrace,
    /// The final worker average (the last finite one if the run diverged).
    pub estimate: DensityFactor,
    pub status: RunStatus,
}

impl RunOutput {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

fn check_records(records: &[MeasurementRecord], d: usize) -> Result<()> {
    if records.is_empty() {
        return Err(invalid("need at least one measurement"));
    }
    if let Some(rec) = records.iter().find(|r| r.pauli.dim() != d) {
        return Err(dim_mismatch(format!("string {} vs factor dimension {d}", rec.pauli)));
    }
    Ok(())
}

/// `G(U) = (1/2m) Σ_k (Tr(A_k U U^†) − y_k)²`.
pub fn objective(records: &[MeasurementRecord], u: &CMatrix) -> Result<f64> {
    check_records(records, u.nrows())?;
    Ok(objective_unchecked(records.iter(), records.len(), u))
}

fn objective_unchecked<'a>(records: impl Iterator<Item = &'a MeasurementRecord>, m: usize, u: &CMatrix) -> f64 {
    let sum: f64 = records
        .map(|rec| {
            let r = expectation_unchecked(&rec.pauli, u) - rec.value;
            r * r
        })
        .sum();
    sum / (2.0 * m as f64)
}

/// `(1/b) Σ_k (Tr(A_k U U^†) − y_k) A_k U` over the whole `batch`.
pub fn stochastic_gradient(batch: &[MeasurementRecord], u: &CMatrix) -> Result<CMatrix> {
    check_records(batch, u.nrows())?;
    let mut out = CMatrix::zeros(u.nrows(), u.ncols());
    gradient_into(batch.iter(), batch.len(), u, &mut out);
    Ok(out)
}

fn gradient_into<'a>(
    batch: impl Iterator<Item = &'a MeasurementRecord>,
    b: usize,
    u: &CMatrix,
    out: &mut CMatrix,
) {
    out.fill(Complex64::new(0.0, 0.0));
    let inv_b = 1.0 / b as f64;
    for rec in batch {
        let residual = expectation_unchecked(&rec.pauli, u) - rec.value;
        accumulate_weighted(std::iter::once((&rec.pauli, residual * inv_b)), u, out);
    }
}

/// Top-`r` PSD factor of `S = (d/m) Σ_k y_k A_k`, the back-projected data
/// rescaled by the restricted smoothness constant `1/d` of the Pauli sensing map.
pub fn spectral_init(records: &[MeasurementRecord], r: usize) -> Result<CMatrix> {
    init_factor(records, r, Init::Spectral)
}

pub fn init_factor(records: &[MeasurementRecord], r: usize, init: Init) -> Result<CMatrix> {
    let first = records.first().ok_or_else(|| invalid("need at least one measurement"))?;
    let n = first.pauli.num_qubits();
    let d = 1usize << n;
    check_records(records, d)?;
    let weight = init.weight(d, records.len());
    let sum = PauliSum::new(
        n,
        records.iter().map(|rec| (rec.pauli.clone(), rec.value * weight)).collect(),
    )?;
    if n <= DENSE_QUBIT_CAP {
        top_r_psd_factor(&sum.to_dense()?, r)
    } else {
        top_r_psd_factor_operator(&sum, r, &LanczosOptions::default())
    }
}

/// Spectral initialization from the pooled records of all shards; every worker starts here.
pub fn initialize(shards: &[WorkerShard], r: usize) -> Result<DensityFactor> {
    initialize_with(shards, r, Init::Spectral)
}

pub fn initialize_with(shards: &[WorkerShard], r: usize, init: Init) -> Result<DensityFactor> {
    if shards.is_empty() {
        return Err(invalid("need at least one shard"));
    }
    let records = crate::data::pooled(shards);
    let u = init_factor(&records, r, init)?;
    let n = records[0].pauli.num_qubits();
    DensityFactor::new(n, u)
}

/// `α = (3μ/10) σ_r(X*)` with `μ = 1`, where `σ_r(X*)` is the smallest
/// nonzero-rank eigenvalue of `U*^† U*`.
pub fn alpha_from_target(target: &DensityFactor) -> f64 {
    let eig = gram(target.entries()).symmetric_eigen();
    let smallest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    0.3 * smallest
}

/// The batch-index stream of a worker, separate from the stream that generated its data.
pub fn batch_rng(shard: &WorkerShard) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(shard.rng_seed);
    rng.set_stream(1);
    rng
}

fn descend(u: &mut CMatrix, grad: &CMatrix, eta: f64) {
    for (x, g) in u.iter_mut().zip(grad.iter()) {
        *x -= g * eta;
    }
}

struct Worker<'a> {
    records: &'a [MeasurementRecord],
    u: CMatrix,
    rng: ChaCha8Rng,
    grad: CMatrix,
    batch: Vec<usize>,
}

impl Worker<'_> {
    fn step(&mut self, eta: f64) {
        let m = self.records.len();
        for slot in self.batch.iter_mut() {
            *slot = self.rng.random_range(0..m);
        }
        let records = self.records;
        gradient_into(self.batch.iter().map(|&k| &records[k]), self.batch.len(), &self.u, &mut self.grad);
        descend(&mut self.u, &self.grad, eta);
    }

    fn health(&self, limit: f64) -> Option<String> {
        let norm = self.u.norm_squared();
        if !norm.is_finite() {
            Some("non-finite iterate".into())
        } else if norm > limit {
            Some(format!("factor norm² {norm:e} exceeds {limit:e}"))
        } else {
            None
        }
    }
}

fn average(workers: &[Worker<'_>]) -> CMatrix {
    let mut acc = workers[0].u.clone();
    for w in &workers[1..] {
        acc += &w.u;
    }
    acc / Complex64::new(workers.len() as f64, 0.0)
}

/// `(1/M) Σ_i ‖Û − U^i‖² = (1/M²) Σ_{i<j} ‖U^i − U^j‖²`; the pairwise form is exactly
/// zero for identical copies.
fn drift(workers: &[Worker<'_>]) -> f64 {
    let m = workers.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (&workers[i].u - &workers[j].u).norm_squared();
        }
    }
    total / (m * m) as f64
}

fn step_all(workers: &mut [Worker<'_>], eta: f64, execution: Execution) {
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            workers.par_iter_mut().for_each(|w| w.step(eta));
        }
        _ => workers.iter_mut().for_each(|w| w.step(eta)),
    }
}

#[derive(Clone, Copy)]
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

struct Recorder<'a> {
    target: Option<&'a DensityFactor>,
    pooled: Vec<&'a MeasurementRecord>,
    clock: Stopwatch,
}

impl<'a> Recorder<'a> {
    fn entry(&self, round: usize, iter: usize, eta: f64, drift: f64, u: &CMatrix) -> Result<TraceEntry> {
        let (epsilon, d2) = match self.target {
            Some(t) => (
                Some(recon_error(u, t.entries())?),
                Some(padded_distance_sq(u, t.entries())?),
            ),
            None => (None, None),
        };
        Ok(TraceEntry {
            round,
            iter,
            eta,
            epsilon,
            d2,
            drift,
            objective: objective_unchecked(self.pooled.iter().copied(), self.pooled.len(), u),
            seconds: self.clock.seconds(),
        })
    }
}

fn check_target(target: Option<&DensityFactor>, n: usize) -> Result<()> {
    match target {
        Some(t) if t.num_qubits() != n => Err(dim_mismatch(format!(
            "target on {} qubits, data on {n}",
            t.num_qubits()
        ))),
        _ => Ok(()),
    }
}

/// Dispatches on `config.mode`.
pub fn run(config: &RunConfig, shards: &[WorkerShard], target: Option<&DensityFactor>) -> Result<RunOutput> {
    match config.mode {
        Mode::Fgd => run_fgd(config, &crate::data::pooled(shards), target),
        Mode::Sfgd | Mode::Local => run_local_sfgd(config, shards, target),
    }
}

/// Local SFGD from the spectral initialization.
pub fn run_local_sfgd(config: &RunConfig, shards: &[WorkerShard], target: Option<&DensityFactor>) -> Result<RunOutput> {
    config.validate()?;
    let init = initialize_with(shards, config.rank, config.init)?;
    run_local_sfgd_from(config, shards, target, init.entries())
}

/// Local SFGD with every worker starting at `init`.
///
/// Each iteration every worker draws `b` indices uniformly with replacement
/// from its own shard and takes a gradient step; at synchronization steps the
/// updated factors are averaged in worker order and broadcast.
pub fn run_local_sfgd_from(
    config: &RunConfig,
    shards: &[WorkerShard],
    target: Option<&DensityFactor>,
    init: &CMatrix,
) -> Result<RunOutput> {
    config.validate()?;
    if shards.len() != config.workers {
        return Err(invalid(format!("{} shards for {} workers", shards.len(), config.workers)));
    }
    for shard in shards {
        check_records(&shard.records, init.nrows())?;
        if config.batch_size > shard.len() {
            return Err(invalid(format!(
                "batch size {} exceeds shard {} with {} records",
                config.batch_size,
                shard.worker_id,
                shard.len()
            )));
        }
    }
    let n = shards[0].records[0].pauli.num_qubits();
    check_target(target, n)?;
    let sync = SyncSchedule::new(config.effective_local_steps())?;
    let total = config.total_steps();

    let mut workers: Vec<Worker<'_>> = shards
        .iter()
        .map(|shard| Worker {
            records: &shard.records,
            u: init.clone(),
            rng: batch_rng(shard),
            grad: CMatrix::zeros(init.nrows(), init.ncols()),
            batch: vec![0; config.batch_size],
        })
        .collect();
    let recorder = Recorder {
        target,
        pooled: shards.iter().flat_map(|s| s.records.iter()).collect(),
        clock: Stopwatch::start(),
    };
    let limit = DIVERGENCE_FACTOR * init.norm_squared().max(f64::MIN_POSITIVE);

    let mut trace = RunTrace::default();
    trace.entries.push(recorder.entry(0, 0, config.schedule.eta_unchecked(0), 0.0, init)?);
    let mut last_avg = init.clone();
    let mut round = 0usize;
    let mut pending_drift = 0.0;

    for t in 0..total {
        let eta = config.schedule.eta_unchecked(t);
        let syncing = sync.is_sync(t);
        if syncing {
            pending_drift = drift(&workers);
        }
        step_all(&mut workers, eta, config.execution);
        if let Some(reason) = workers.iter().find_map(|w| w.health(limit)) {
            return Ok(RunOutput {
                trace,
                estimate: DensityFactor::new(n, last_avg)?,
                status: RunStatus::Diverged { iteration: t, reason },
            });
        }
        if syncing {
            let avg = average(&workers);
            for w in workers.iter_mut() {
                w.u.copy_from(&avg);
            }
            round += 1;
            if round.is_multiple_of(config.record_every) || t + 1 == total {
                trace.entries.push(recorder.entry(round, t + 1, eta, pending_drift, &avg)?);
            }
            last_avg = avg;
        }
    }

    if !total.is_multiple_of(sync.local_steps()) {
        // budget ended between synchronizations: report the virtual average
        let d = drift(&workers);
        let avg = average(&workers);
        let eta = config.schedule.eta_unchecked(total.saturating_sub(1));
        trace.entries.push(recorder.entry(round, total, eta, d, &avg)?);
        last_avg = avg;
    }

    Ok(RunOutput {
        trace,
        estimate: DensityFactor::new(n, last_avg)?,
        status: RunStatus::Completed,
    })
}

/// Deterministic full-batch factored gradient descent on pooled records.
pub fn run_fgd(config: &RunConfig, records: &[MeasurementRecord], target: Option<&DensityFactor>) -> Result<RunOutput> {
    config.validate()?;
    let init = init_factor(records, config.rank, config.init)?;
    run_fgd_from(config, records, target, &init)
}

pub fn run_fgd_from(
    config: &RunConfig,
    records: &[MeasurementRecord],
    target: Option<&DensityFactor>,
    init: &CMatrix,
) -> Result<RunOutput> {
    config.validate()?;
    check_records(records, init.nrows())?;
    let n = records[0].pauli.num_qubits();
    check_target(target, n)?;
    let total = match config.budget {
        Budget::Rounds(p) => p,
        Budget::TotalSteps(t) => t,
    };
    let recorder = Recorder {
        target,
        pooled: records.iter().collect(),
        clock: Stopwatch::start(),
    };
    let limit = DIVERGENCE_FACTOR * init.norm_squared().max(f64::MIN_POSITIVE);

    let mut u = init.clone();
    let mut grad = CMatrix::zeros(u.nrows(), u.ncols());
    let mut trace = RunTrace::default();
    trace.entries.push(recorder.entry(0, 0, config.schedule.eta_unchecked(0), 0.0, &u)?);
    let mut last = u.clone();
    for t in 0..total {
        let eta = config.schedule.eta_unchecked(t);
        gradient_into(records.iter(), records.len(), &u, &mut grad);
        descend(&mut u, &grad, eta);
        let norm = u.norm_squared();
        if !norm.is_finite() || norm > limit {
            return Ok(RunOutput {
                trace,
                estimate: DensityFactor::new(n, last)?,
                status: RunStatus::Diverged {
                    iteration: t,
                    reason: format!("factor norm² {norm:e}"),
                },
            });
        }
        if (t + 1) % config.record_every == 0 || t + 1 == total {
            trace.entries.push(recorder.entry(t + 1, t + 1, eta, 0.0, &u)?);
        }
        last.copy_from(&u);
    }
    Ok(RunOutput {
        trace,
        estimate: DensityFactor::new(n, u)?,
        status: RunStatus::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_shards, pooled};
    use crate::oracle::{dense_gradient_factor, dense_objective};
    use crate::pauli::PauliString;
    use crate::states::ghz_factor;
    use crate::random::{random_matrix, random_string, random_unitary, rng};

    fn exact_records(target: &DensityFactor, strings: Vec<PauliString>) -> Vec<MeasurementRecord> {
        strings
            .into_iter()
            .map(|p| crate::data::measure(&p, target, Shots::Exact, 0).unwrap())
            .collect()
    }

    fn small_config() -> RunConfig {
        RunConfig {
            qubits: 3,
            workers: 4,
            local_steps: 5,
            batch_size: 10,
            measurements_per_worker: 60,
            budget: Budget::Rounds(8),
            seed: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn step_sizes() {
        let dim = StepSchedule::Diminishing { alpha: 0.3 };
        assert!((step_size(&dim, 0).unwrap() - 1.0 / 0.3).abs() < 1e-15);
        assert!((step_size(&dim, 1).unwrap() - 2.0 / (3.0 * 0.3)).abs() < 1e-15);
        assert!((1..100).all(|t| dim.step_size(t).unwrap() < dim.step_size(t - 1).unwrap()));
        let constant = StepSchedule::Constant { eta: 1.0 };
        assert!((0..50).all(|t| constant.step_size(t).unwrap() == 1.0));
        assert!(StepSchedule::Diminishing { alpha: 0.0 }.step_size(0).is_err());
        assert!(StepSchedule::Diminishing { alpha: -1.0 }.step_size(0).is_err());
        assert!(StepSchedule::Constant { eta: -0.5 }.step_size(0).is_err());
        assert!(StepSchedule::Constant { eta: f64::NAN }.step_size(0).is_err());
    }

    #[test]
    fn sync_schedule_bookkeeping() {
        assert!(SyncSchedule::new(0).is_err());
        let s = SyncSchedule::new(4).unwrap();
        let syncs: Vec<usize> = (0..12).filter(|&t| s.is_sync(t)).collect();
        assert_eq!(syncs, vec![3, 7, 11]);
        assert_eq!(s.rounds(13), 3);
        assert!((0..5).all(|t| SyncSchedule::new(1).unwrap().is_sync(t)));
    }

    #[test]
    fn objective_special_cases() {
        let ghz = ghz_factor(3).unwrap();
        let mut g = rng(1);
        let recs = exact_records(&ghz, (0..30).map(|_| random_string(&mut g, 3)).collect());
        assert!(objective(&recs, ghz.entries()).unwrap() < 1e-30);
        let zero = CMatrix::zeros(8, 1);
        let expected = recs.iter().map(|r| r.value * r.value).sum::<f64>() / 60.0;
        assert!((objective(&recs, &zero).unwrap() - expected).abs() < 1e-15);
        assert!(objective(&[], &zero).is_err());
        assert!(objective(&recs, &CMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn objective_and_gradient_match_dense_oracle() {
        let mut g = rng(2);
        let target = crate::states::random_state_factor(2, 1, 5).unwrap();
        let strings: Vec<_> = (0..12).map(|_| random_string(&mut g, 2)).collect();
        let recs: Vec<_> = strings
            .iter()
            .map(|p| crate::data::measure(p, &target, Shots::Finite(100), 9).unwrap())
            .collect();
        let values: Vec<f64> = recs.iter().map(|r| r.value).collect();
        let u = random_matrix(&mut g, 4, 1);
        let dense = dense_objective(&strings, &values, &(&u * u.adjoint())).unwrap();
        assert!((objective(&recs, &u).unwrap() - dense).abs() < 1e-10);
        let grad = stochastic_gradient(&recs, &u).unwrap();
        assert!((grad - dense_gradient_factor(&strings, &values, &u).unwrap()).camax() < 1e-10);
    }

    #[test]
    fn gradient_vanishes_at_exact_solution() {
        let ghz = ghz_factor(3).unwrap();
        let mut g = rng(4);
        let recs = exact_records(&ghz, (0..20).map(|_| random_string(&mut g, 3)).collect());
        assert!(stochastic_gradient(&recs, ghz.entries()).unwrap().camax() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut g = rng(7);
        let target = crate::states::random_state_factor(2, 1, 1).unwrap();
        let strings: Vec<_> = (0..5).map(|_| random_string(&mut g, 2)).collect();
        let recs: Vec<_> = strings
            .iter()
            .map(|p| crate::data::measure(p, &target, Shots::Finite(50), 2).unwrap())
            .collect();
        let u = random_matrix(&mut g, 4, 1);
        let grad = stochastic_gradient(&recs, &u).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let delta = random_matrix(&mut g, 4, 1);
            let step = &delta * Complex64::new(h, 0.0);
            let fd = (objective(&recs, &(&u + &step)).unwrap() - objective(&recs, &(&u - &step)).unwrap()) / (2.0 * h);
            let analytic = 2.0 * grad.dotc(&delta).re;
            assert!((fd - analytic).abs() <= 1e-5 * (1.0 + analytic.abs()), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn spectral_init_on_complete_basis_is_exact() {
        let ghz = ghz_factor(2).unwrap();
        let recs = exact_records(&ghz, PauliString::all(2).unwrap());
        let shards = vec![WorkerShard {
            worker_id: 0,
            records: recs,
            rng_seed: 0,
        }];
        let u0 = initialize(&shards, 1).unwrap();
        assert!((u0.density() - ghz.density()).camax() < 1e-9);
        assert_eq!(u0, initialize(&shards, 1).unwrap());
    }

    #[test]
    fn gradient_init_is_spectral_shrunk_by_root_d() {
        let ghz = ghz_factor(3).unwrap();
        let config = small_config();
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let spectral = initialize(&shards, 1).unwrap();
        let gradient = initialize_with(&shards, 1, Init::Gradient).unwrap();
        let scaled = spectral.entries() / Complex64::new(8f64.sqrt(), 0.0);
        assert!((gradient.entries() - scaled).camax() < 1e-12);
        assert_eq!("gradient".parse::<Init>().unwrap(), Init::Gradient);
        assert!("svd".parse::<Init>().is_err());
    }

    #[test]
    fn spectral_init_of_zero_data_is_zero() {
        let mut g = rng(3);
        let recs: Vec<_> = (0..10)
            .map(|_| MeasurementRecord {
                pauli: random_string(&mut g, 3),
                value: 0.0,
                shots: Shots::Exact,
            })
            .collect();
        assert_eq!(spectral_init(&recs, 2).unwrap(), CMatrix::zeros(8, 2));
    }

    #[test]
    fn alpha_for_ghz() {
        assert!((alpha_from_target(&ghz_factor(3).unwrap()) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_worker_full_batch_matches_fgd() {
        let ghz = ghz_factor(3).unwrap();
        let config = RunConfig {
            workers: 1,
            local_steps: 1,
            batch_size: 40,
            measurements_per_worker: 40,
            budget: Budget::Rounds(15),
            shots: Shots::Exact,
            ..small_config()
        };
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let u0 = initialize(&shards, 1).unwrap();
        // with b = m the sampled batch is a multiset; rebuild it as the plain full gradient
        let mut fgd_u = u0.entries().clone();
        let records = &shards[0].records;
        let mut rng = batch_rng(&shards[0]);
        let mut local_u = u0.entries().clone();
        for _ in 0..15 {
            let batch: Vec<MeasurementRecord> =
                (0..40).map(|_| records[rng.random_range(0..40)].clone()).collect();
            local_u -= stochastic_gradient(&batch, &local_u).unwrap();
            fgd_u -= stochastic_gradient(records, &fgd_u).unwrap();
        }
        let out = run_local_sfgd(&config, &shards, Some(&ghz)).unwrap();
        assert!((out.estimate.entries() - &local_u).camax() < 1e-12);

        let fgd = run_fgd(&config, records, Some(&ghz)).unwrap();
        assert!((fgd.estimate.entries() - &fgd_u).camax() < 1e-12);
        assert_eq!(fgd.trace.entries.len(), 16);
    }

    #[test]
    fn pairwise_drift_matches_definition() {
        let mut g = rng(9);
        let workers: Vec<Worker<'_>> = (0..4)
            .map(|_| Worker {
                records: &[],
                u: random_matrix(&mut g, 8, 2),
                rng: ChaCha8Rng::seed_from_u64(0),
                grad: CMatrix::zeros(8, 2),
                batch: Vec::new(),
            })
            .collect();
        let avg = average(&workers);
        let direct = workers.iter().map(|w| (&avg - &w.u).norm_squared()).sum::<f64>() / 4.0;
        assert!((drift(&workers) - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn drift_is_zero_without_local_steps() {
        let ghz = ghz_factor(3).unwrap();
        let config = RunConfig {
            local_steps: 1,
            ..small_config()
        };
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let out = run_local_sfgd(&config, &shards, Some(&ghz)).unwrap();
        assert!(out.trace.entries.iter().all(|e| e.drift == 0.0));

        let local = RunConfig {
            local_steps: 5,
            ..small_config()
        };
        let out = run_local_sfgd(&local, &shards, Some(&ghz)).unwrap();
        assert!(out.trace.entries[1..].iter().all(|e| e.drift > 0.0));
    }

    #[test]
    fn trace_bookkeeping() {
        let ghz = ghz_factor(3).unwrap();
        let config = small_config();
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let out = run_local_sfgd(&config, &shards, Some(&ghz)).unwrap();
        assert_eq!(out.status, RunStatus::Completed);
        let rounds: Vec<usize> = out.trace.entries.iter().map(|e| e.round).collect();
        assert_eq!(rounds, (0..=8).collect::<Vec<_>>());
        assert!(out.trace.entries.windows(2).all(|w| w[0].iter < w[1].iter));
        assert_eq!(out.trace.last().unwrap().iter, 40);

        let sparse = RunConfig {
            record_every: 3,
            budget: Budget::TotalSteps(37),
            ..small_config()
        };
        let out = run_local_sfgd(&sparse, &shards, None).unwrap();
        let rounds: Vec<(usize, usize)> = out.trace.entries.iter().map(|e| (e.round, e.iter)).collect();
        assert_eq!(rounds, vec![(0, 0), (3, 15), (6, 30), (7, 37)]);
        assert!(out.trace.entries.iter().all(|e| e.epsilon.is_none() && e.d2.is_none()));
    }

    #[test]
    fn zero_step_keeps_iterates_fixed() {
        let ghz = ghz_factor(3).unwrap();
        let config = RunConfig {
            schedule: StepSchedule::Constant { eta: 0.0 },
            ..small_config()
        };
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let u0 = initialize(&shards, 1).unwrap();
        let out = run_fgd(&config, &pooled(&shards), Some(&ghz)).unwrap();
        assert_eq!(out.estimate, u0);
    }

    #[test]
    fn huge_steps_report_divergence() {
        let ghz = ghz_factor(3).unwrap();
        let config = RunConfig {
            schedule: StepSchedule::Constant { eta: 500.0 },
            budget: Budget::Rounds(200),
            ..small_config()
        };
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let out = run_local_sfgd(&config, &shards, Some(&ghz)).unwrap();
        assert!(out.diverged(), "{:?}", out.status);
        assert!(out.estimate.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert!(out.trace.entries.iter().all(|e| e.objective.is_finite()));
        let fgd = run_fgd(&config, &pooled(&shards), Some(&ghz)).unwrap();
        assert!(fgd.diverged());
    }

    #[test]
    fn gauge_rotation_leaves_metrics_unchanged() {
        let target = crate::states::random_state_factor(3, 2, 12).unwrap();
        let config = RunConfig {
            rank: 2,
            shots: Shots::Finite(200),
            ..small_config()
        };
        let shards = build_shards(&config.dataset(), &target).unwrap();
        let u0 = initialize(&shards, 2).unwrap();
        let q = random_unitary(&mut rng(5), 2);
        let a = run_local_sfgd_from(&config, &shards, Some(&target), u0.entries()).unwrap();
        let b = run_local_sfgd_from(&config, &shards, Some(&target), &(u0.entries() * &q)).unwrap();
        for (x, y) in a.trace.entries.iter().zip(&b.trace.entries) {
            assert!((x.epsilon.unwrap() - y.epsilon.unwrap()).abs() < 1e-10);
            assert!((x.d2.unwrap() - y.d2.unwrap()).abs() < 1e-10);
        }
        assert!((a.estimate.entries() * &q - b.estimate.entries()).camax() < 1e-10);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let ghz = ghz_factor(3).unwrap();
        let config = small_config();
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let wrong_workers = RunConfig { workers: 3, ..config.clone() };
        assert!(run_local_sfgd(&wrong_workers, &shards, None).is_err());
        let big_batch = RunConfig { batch_size: 61, ..config.clone() };
        assert!(run_local_sfgd(&big_batch, &shards, None).is_err());
        let wrong_target = ghz_factor(2).unwrap();
        assert!(run_local_sfgd(&config, &shards, Some(&wrong_target)).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let ghz = ghz_factor(3).unwrap();
        let config = small_config();
        let shards = build_shards(&config.dataset(), &ghz).unwrap();
        let out = run_local_sfgd(&config, &shards, Some(&ghz)).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf, Some("{\"seed\": 3}")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# {\"seed\": 3}"));
        assert_eq!(lines.next(), Some("round,iter,eta,epsilon,d2,drift,objective,seconds"));
        let back = RunTrace::read_csv(buf.as_slice()).unwrap();
        assert!(back.same_metrics(&out.trace));
    }
}
