//! Browser bindings for the local SFGD demo page in `www/`.
//!
//! Every run reconstructs an `n`-qubit GHZ state from shot-noise Pauli data.
//! Results come back as flat `Float64Array`s that the page draws on a canvas.

use lsfgd_core::data::{build_shards, Shots};
use lsfgd_core::sfgd::{run, Budget, Execution, Init, RunConfig, RunOutput, StepSchedule};
use lsfgd_core::states::ghz_factor;
use lsfgd_core::{DensityFactor, Result};
use wasm_bindgen::prelude::*;

/// Largest register the page offers; keeps a run well under a second.
pub const MAX_DEMO_QUBITS: usize = 6;

/// Settings shared by all demo operations. `shots == 0` means exact expectations.
#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub qubits: usize,
    pub workers: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub eta: f64,
    pub shots: u32,
    pub seed: u64,
}

impl Settings {
    fn config(&self) -> Result<RunConfig> {
        if self.qubits > MAX_DEMO_QUBITS {
            return Err(lsfgd_core::Error::InvalidArgument(format!(
                "the demo runs at most {MAX_DEMO_QUBITS} qubits"
            )));
        }
        let config = RunConfig {
            qubits: self.qubits,
            workers: self.workers,
            local_steps: self.local_steps,
            budget: Budget::Rounds(self.rounds),
            schedule: StepSchedule::Constant { eta: self.eta },
            shots: if self.shots == 0 { Shots::Exact } else { Shots::Finite(self.shots) },
            seed: self.seed,
            init: Init::Gradient,
            execution: Execution::Sequential,
            ..RunConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn run(&self) -> Result<(RunOutput, DensityFactor)> {
        let config = self.config()?;
        let target = ghz_factor(config.qubits)?;
        let shards = build_shards(&config.dataset(), &target)?;
        Ok((run(&config, &shards, Some(&target))?, target))
    }
}

/// Reconstruction error after every synchronization round, starting at round 0.
/// A diverged run stops early.
pub fn epsilon_curve(settings: &Settings) -> Result<Vec<f64>> {
    let (out, _) = settings.run()?;
    Ok(out.trace.epsilons())
}

/// One curve per entry of `local_steps`, each padded with NaN to `rounds + 1` points.
pub fn local_steps_curves(settings: &Settings, local_steps: &[usize]) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(local_steps.len() * (settings.rounds + 1));
    for &h in local_steps {
        let mut curve = epsilon_curve(&Settings { local_steps: h, ..*settings })?;
        curve.resize(settings.rounds + 1, f64::NAN);
        flat.extend(curve);
    }
    Ok(flat)
}

/// `|ρ̂|` then `|ρ*|`, each `d × d` row-major, followed by the final error.
pub fn density_moduli(settings: &Settings) -> Result<Vec<f64>> {
    let (out, target) = settings.run()?;
    let mut flat = Vec::new();
    for rho in [out.estimate.density(), target.density()] {
        let d = rho.nrows();
        flat.extend((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| rho[(i, j)].norm()));
    }
    flat.push(out.trace.epsilons().last().copied().unwrap_or(f64::NAN));
    Ok(flat)
}

fn settings(qubits: u32, workers: u32, local_steps: u32, rounds: u32, eta: f64, shots: u32, seed: u32) -> Settings {
    Settings {
        qubits: qubits as usize,
        workers: workers as usize,
        local_steps: local_steps as usize,
        rounds: rounds as usize,
        eta,
        shots,
        seed: seed as u64,
    }
}

fn js(e: lsfgd_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = epsilonCurve)]
pub fn epsilon_curve_js(
    qubits: u32,
    workers: u32,
    local_steps: u32,
    rounds: u32,
    eta: f64,
    shots: u32,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    epsilon_curve(&settings(qubits, workers, local_steps, rounds, eta, shots, seed)).map_err(js)
}

#[wasm_bindgen(js_name = localStepsCurves)]
pub fn local_steps_curves_js(
    qubits: u32,
    workers: u32,
    local_steps: &[u32],
    rounds: u32,
    eta: f64,
    shots: u32,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    let hs: Vec<usize> = local_steps.iter().map(|&h| h as usize).collect();
    local_steps_curves(&settings(qubits, workers, 1, rounds, eta, shots, seed), &hs).map_err(js)
}

#[wasm_bindgen(js_name = densityModuli)]
pub fn density_moduli_js(
    qubits: u32,
    workers: u32,
    local_steps: u32,
    rounds: u32,
    eta: f64,
    shots: u32,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    density_moduli(&settings(qubits, workers, local_steps, rounds, eta, shots, seed)).map_err(js)
}
