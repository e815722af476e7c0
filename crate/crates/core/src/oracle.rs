//! Brute-force references over explicit `d × d` matrices.
//!
//! Everything here materializes Pauli strings with [`dense_pauli`] and never
//! calls the bit-manipulation kernels, so it can be used to check them.

use std::collections::HashSet;

use num_complex::Complex64;

use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::pauli::{dense_pauli, PauliString, DENSE_QUBIT_CAP};
use crate::CMatrix;

/// An explicit density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub rho: CMatrix,
}

impl DenseState {
    pub fn new(rho: CMatrix) -> Result<Self> {
        if !rho.is_square() || !rho.nrows().is_power_of_two() {
            return Err(dim_mismatch(format!("density matrix shape {:?}", rho.shape())));
        }
        let defect = (&rho - rho.adjoint()).camax();
        if defect > 1e-10 {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self { rho })
    }

    pub fn from_factor(u: &CMatrix) -> Self {
        Self { rho: u * u.adjoint() }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }
}

fn check_cap(n: usize) -> Result<()> {
    if n > DENSE_QUBIT_CAP {
        return Err(Error::SizeCap {
            qubits: n,
            cap: DENSE_QUBIT_CAP,
        });
    }
    Ok(())
}

fn check_strings(strings: &[PauliString], values: &[f64], d: usize) -> Result<()> {
    if strings.len() != values.len() {
        return Err(dim_mismatch(format!("{} strings, {} values", strings.len(), values.len())));
    }
    if strings.is_empty() {
        return Err(invalid("need at least one measurement"));
    }
    for p in strings {
        check_cap(p.num_qubits())?;
        if p.dim() != d {
            return Err(dim_mismatch(format!("string {p} vs dimension {d}")));
        }
    }
    Ok(())
}

/// `Tr(P ρ)` from the materialized product.
pub fn dense_expectation(p: &PauliString, rho: &CMatrix) -> Result<f64> {
    check_cap(p.num_qubits())?;
    if rho.nrows() != p.dim() {
        return Err(dim_mismatch(format!("string {p} vs dimension {}", rho.nrows())));
    }
    Ok((dense_pauli(p)? * rho).trace().re)
}

/// `F(ρ) = (1/2m) Σ_k (Tr(A_k ρ) − y_k)²`.
pub fn dense_objective(strings: &[PauliString], values: &[f64], rho: &CMatrix) -> Result<f64> {
    check_strings(strings, values, rho.nrows())?;
    let mut total = 0.0;
    for (p, y) in strings.iter().zip(values) {
        let r = (dense_pauli(p)? * rho).trace().re - y;
        total += r * r;
    }
    Ok(total / (2.0 * strings.len() as f64))
}

/// `(1/m) (Σ_k (Tr(A_k U U^†) − y_k) A_k) · U` with every `A_k` materialized.
pub fn dense_gradient_factor(strings: &[PauliString], values: &[f64], u: &CMatrix) -> Result<CMatrix> {
    let d = u.nrows();
    check_strings(strings, values, d)?;
    let rho = u * u.adjoint();
    let mut weighted = CMatrix::zeros(d, d);
    for (p, y) in strings.iter().zip(values) {
        let a = dense_pauli(p)?;
        let residual = (&a * &rho).trace().re - y;
        weighted += a * Complex64::new(residual, 0.0);
    }
    Ok(weighted * u / Complex64::new(strings.len() as f64, 0.0))
}

/// `ρ = (1/d) Σ_P Tr(P ρ) P` from expectations over the complete Pauli basis.
pub fn pauli_expand(values: &[(PauliString, f64)]) -> Result<DenseState> {
    let Some((first, _)) = values.first() else {
        return Err(Error::IncompleteBasis("no expectations given".into()));
    };
    let n = first.num_qubits();
    check_cap(n)?;
    let d = first.dim();
    let expected = d * d;
    let distinct: HashSet<&PauliString> = values.iter().map(|(p, _)| p).collect();
    if values.iter().any(|(p, _)| p.num_qubits() != n) {
        return Err(Error::IncompleteBasis("strings on different qubit counts".into()));
    }
    if values.len() != expected || distinct.len() != expected {
        return Err(Error::IncompleteBasis(format!(
            "need all {expected} strings once, got {} ({} distinct)",
            values.len(),
            distinct.len()
        )));
    }
    let mut rho = CMatrix::zeros(d, d);
    for (p, t) in values {
        rho += dense_pauli(p)? * Complex64::new(*t, 0.0);
    }
    rho /= Complex64::new(d as f64, 0.0);
    DenseState::new(rho)
}

/// Exact expectations of a dense state over all `4^n` strings; inverse of [`pauli_expand`].
pub fn pauli_coefficients(state: &DenseState) -> Result<Vec<(PauliString, f64)>> {
    let n = state.dim().trailing_zeros() as usize;
    check_cap(n)?;
    PauliString::all(n)?
        .into_iter()
        .map(|p| {
            let t = dense_expectation(&p, &state.rho)?;
            Ok((p, t))
        })
        .collect()
}
