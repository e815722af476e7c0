//! Validation suites: the matrix-free kernels against the dense oracle, the
//! gradient against finite differences, Procrustes against brute force, and
//! the step/synchronization schedules against their formulas.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_shards, measure, MeasurementRecord, Shots};
use crate::error::{invalid, Error, Result};
use crate::linalg::procrustes_distance;
use crate::oracle::{dense_expectation, dense_gradient_factor, dense_objective};
use crate::pauli::{dense_pauli, fault, sense_expectation, weighted_adjoint_apply, PauliString};
use crate::random::{random_matrix, random_string, random_unitary, rng};
use crate::sfgd::{
    objective, run_local_sfgd, step_size, stochastic_gradient, Budget, Execution, RunConfig, StepSchedule,
};
use crate::states::{ghz_factor, random_state_factor};
use crate::CMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Oracle,
    Gradient,
    Procrustes,
    Schedule,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Oracle, Suite::Gradient, Suite::Procrustes, Suite::Schedule];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Gradient => "gradient",
            Suite::Procrustes => "procrustes",
            Suite::Schedule => "schedule",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite {s:?}")))
    }
}

/// `all` or a comma-separated list of suite names.
pub fn parse_suites(s: &str) -> Result<Vec<Suite>> {
    if s == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    s.split(',').map(|part| part.trim().parse()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    /// NaN errors fail.
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct ValidationOptions {
    pub oracle_cases: usize,
    pub gradient_points: usize,
    pub gradient_directions: usize,
    pub rotations: usize,
    pub seed: u64,
    /// Conjugate the Pauli phase in the fast kernels; the oracle suite must then fail.
    pub inject_fault: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            oracle_cases: 200,
            gradient_points: 10,
            gradient_directions: 20,
            rotations: 100,
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<11} {:<28} {:>6} {:>11} {:>9}  result",
            "suite", "check", "cases", "max_error", "tolerance"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<11} {:<28} {:>6} {:>11.3e} {:>9.0e}  {}",
                c.suite.name(),
                c.name,
                c.cases,
                c.max_error,
                c.tolerance,
                if c.passed() { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn run_validation(suites: &[Suite], opts: &ValidationOptions) -> Result<ValidationReport> {
    let _fault = opts.inject_fault.then(fault::inject_phase_fault);
    let mut report = ValidationReport::default();
    for suite in suites {
        let checks = match suite {
            Suite::Oracle => oracle_checks(opts.oracle_cases, opts.seed)?,
            Suite::Gradient => gradient_checks(opts.gradient_points, opts.gradient_directions, opts.seed)?,
            Suite::Procrustes => procrustes_checks(opts.rotations, opts.seed)?,
            Suite::Schedule => schedule_checks()?,
        };
        report.checks.extend(checks);
    }
    Ok(report)
}

struct Tracker {
    suite: Suite,
    name: String,
    cases: usize,
    max_error: f64,
    tolerance: f64,
}

impl Tracker {
    fn new(suite: Suite, name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            cases: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, error: f64) {
        self.cases += 1;
        // a NaN is never overwritten, since no comparison with it succeeds
        if error.is_nan() || error > self.max_error {
            self.max_error = error;
        }
    }

    fn finish(self) -> Check {
        Check {
            suite: self.suite,
            name: self.name,
            cases: self.cases,
            max_error: self.max_error,
            tolerance: self.tolerance,
        }
    }
}

/// A trace-one factor with `r ∈ [1, 3]` columns, capped at `d`.
fn random_state(g: &mut ChaCha8Rng, d: usize) -> CMatrix {
    let r = g.random_range(1..=3usize.min(d));
    let u = random_matrix(g, d, r);
    let norm = u.norm();
    u / Complex64::new(norm, 0.0)
}

fn records(strings: &[PauliString], values: &[f64]) -> Vec<MeasurementRecord> {
    strings
        .iter()
        .zip(values)
        .map(|(p, &value)| MeasurementRecord {
            pauli: p.clone(),
            value,
            shots: Shots::Exact,
        })
        .collect()
}

/// Matrix-free kernels against materialized Pauli matrices, `cases` random instances per `n ∈ 1..=4`.
pub fn oracle_checks(cases: usize, seed: u64) -> Result<Vec<Check>> {
    let mut g = rng(seed);
    let mut checks = Vec::new();
    for n in 1..=4usize {
        let d = 1 << n;
        let mut expectation = Tracker::new(Suite::Oracle, format!("sense_expectation n={n}"), 1e-10);
        let mut adjoint = Tracker::new(Suite::Oracle, format!("weighted_adjoint_apply n={n}"), 1e-10);
        let mut obj = Tracker::new(Suite::Oracle, format!("objective n={n}"), 1e-10);
        let mut grad = Tracker::new(Suite::Oracle, format!("stochastic_gradient n={n}"), 1e-10);
        for _ in 0..cases {
            let u = random_state(&mut g, d);
            let rho = &u * u.adjoint();
            let p = random_string(&mut g, n);
            expectation.record((sense_expectation(&p, &u)? - dense_expectation(&p, &rho)?).abs());

            let m = g.random_range(1..=8usize);
            let strings: Vec<PauliString> = (0..m).map(|_| random_string(&mut g, n)).collect();
            let weights: Vec<f64> = (0..m).map(|_| g.random_range(-1.0..1.0)).collect();
            let v = random_matrix(&mut g, d, u.ncols());
            let mut dense = CMatrix::zeros(d, v.ncols());
            for (s, w) in strings.iter().zip(&weights) {
                dense += dense_pauli(s)? * &v * Complex64::new(*w, 0.0);
            }
            adjoint.record((weighted_adjoint_apply(&strings, &weights, &v)? - dense).camax());

            let recs = records(&strings, &weights);
            obj.record((objective(&recs, &u)? - dense_objective(&strings, &weights, &rho)?).abs());
            let diff = stochastic_gradient(&recs, &u)? - dense_gradient_factor(&strings, &weights, &u)?;
            grad.record(diff.camax());
        }
        checks.extend([expectation.finish(), adjoint.finish(), obj.finish(), grad.finish()]);
    }
    Ok(checks)
}

/// Central differences of the objective against `2 Re⟨g, Δ⟩` at `n = 3`, `r ∈ {1, 2}`.
pub fn gradient_checks(points: usize, directions: usize, seed: u64) -> Result<Vec<Check>> {
    let mut g = rng(seed ^ 0x6772_6164);
    let n = 3;
    let h = 1e-5;
    let mut checks = Vec::new();
    for r in [1usize, 2] {
        let mut tracker = Tracker::new(Suite::Gradient, format!("finite differences r={r}"), 1e-5);
        for point in 0..points {
            let target = random_state_factor(n, r, seed.wrapping_add(point as u64))?;
            let recs: Vec<MeasurementRecord> = (0..20)
                .map(|k| measure(&random_string(&mut g, n), &target, Shots::Finite(100), k))
                .collect::<Result<_>>()?;
            let u = random_matrix(&mut g, 1 << n, r) * Complex64::new(0.3, 0.0);
            let grad = stochastic_gradient(&recs, &u)?;
            for _ in 0..directions {
                let delta = random_matrix(&mut g, 1 << n, r);
                let step = &delta * Complex64::new(h, 0.0);
                let fd = (objective(&recs, &(&u + &step))? - objective(&recs, &(&u - &step))?) / (2.0 * h);
                let analytic = 2.0 * grad.dotc(&delta).re;
                tracker.record((fd - analytic).abs() / (1.0 + analytic.abs()));
            }
        }
        checks.push(tracker.finish());
    }
    Ok(checks)
}

pub fn procrustes_checks(rotations: usize, seed: u64) -> Result<Vec<Check>> {
    let mut g = rng(seed ^ 0x7072_6f63);
    let mut invariance = Tracker::new(Suite::Procrustes, "D(U, UR) = 0", 1e-10);
    let mut closed = Tracker::new(Suite::Procrustes, "closed form = explicit", 1e-10);
    let mut unitary = Tracker::new(Suite::Procrustes, "aligning rotation unitary", 1e-10);
    for k in 0..rotations {
        let r = 1 + k % 3;
        let u = random_matrix(&mut g, 8, r);
        let rot = random_unitary(&mut g, r);
        invariance.record(procrustes_distance(&u, &(&u * &rot))?.distance());
        let v = random_matrix(&mut g, 8, r);
        let a = procrustes_distance(&u, &v)?;
        let nuclear: f64 = (v.adjoint() * &u).singular_values().iter().sum();
        let closed_form = u.norm_squared() + v.norm_squared() - 2.0 * nuclear;
        closed.record((closed_form - (&u - &v * &a.rotation).norm_squared()).abs());
        unitary.record((a.rotation.adjoint() * &a.rotation - CMatrix::identity(r, r)).camax());
    }
    let mut grid = Tracker::new(Suite::Procrustes, "r=1 phase grid", 1e-6);
    for _ in 0..5 {
        let u = random_matrix(&mut g, 8, 1);
        let v = random_matrix(&mut g, 8, 1);
        let steps = 10_000;
        let brute = (0..steps)
            .map(|k| {
                let phase = Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / steps as f64);
                (&u - &v * phase).norm_squared()
            })
            .fold(f64::INFINITY, f64::min);
        grid.record((procrustes_distance(&u, &v)?.distance_sq - brute).abs());
    }
    Ok(vec![invariance.finish(), closed.finish(), unitary.finish(), grid.finish()])
}

pub fn schedule_checks() -> Result<Vec<Check>> {
    let mut formula = Tracker::new(Suite::Schedule, "step size formulas", 1e-15);
    let mut monotone = Tracker::new(Suite::Schedule, "diminishing decreasing", 0.0);
    for alpha in [0.1, 0.3, 1.0, 7.5] {
        let dim = StepSchedule::Diminishing { alpha };
        formula.record((step_size(&dim, 0)? - 1.0 / alpha).abs() * alpha);
        formula.record((step_size(&dim, 1)? - 2.0 / (3.0 * alpha)).abs() * alpha);
        for t in 1..1000 {
            monotone.record((step_size(&dim, t)? - step_size(&dim, t - 1)?).max(0.0));
        }
    }
    let constant = StepSchedule::Constant { eta: 1.0 };
    for t in 0..100 {
        formula.record((step_size(&constant, t)? - 1.0).abs());
    }

    let mut rounds = Tracker::new(Suite::Schedule, "averaging events = floor(T/h)", 0.0);
    let mut drift = Tracker::new(Suite::Schedule, "drift zero when h=1", 0.0);
    let target = ghz_factor(2)?;
    for (h, total) in [(1usize, 7usize), (3, 7), (4, 8), (5, 4), (2, 9)] {
        let config = RunConfig {
            qubits: 2,
            workers: 3,
            local_steps: h,
            batch_size: 4,
            measurements_per_worker: 12,
            budget: Budget::TotalSteps(total),
            schedule: StepSchedule::Constant { eta: 0.5 },
            execution: Execution::Sequential,
            ..RunConfig::default()
        };
        let shards = build_shards(&config.dataset(), &target)?;
        let out = run_local_sfgd(&config, &shards, Some(&target))?;
        let done = out.trace.last().map_or(0, |e| e.round);
        rounds.record(done.abs_diff(total / h) as f64);
        if h == 1 {
            for e in &out.trace.entries {
                drift.record(e.drift.abs());
            }
        }
    }
    Ok(vec![formula.finish(), monotone.finish(), rounds.finish(), drift.finish()])
}
