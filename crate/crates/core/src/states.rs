//! Target states stored as low-rank factors `U` with `ρ = U U^†`.

use std::io::{BufRead, Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::pauli::MAX_QUBITS;
use crate::CMatrix;

/// A `d × r` complex factor of a density matrix on `n` qubits, `d = 2^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityFactor {
    n: usize,
    entries: CMatrix,
}

impl DensityFactor {
    pub fn new(n: usize, entries: CMatrix) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(invalid(format!("qubit count {n} out of range")));
        }
        if entries.nrows() != 1 << n {
            return Err(dim_mismatch(format!(
                "factor has {} rows, expected 2^{n} = {}",
                entries.nrows(),
                1usize << n
            )));
        }
        if entries.ncols() == 0 {
            return Err(invalid("factor rank must be at least 1"));
        }
        Ok(Self { n, entries })
    }

    pub fn zeros(n: usize, r: usize) -> Result<Self> {
        Self::new(n, CMatrix::zeros(1usize << n, r))
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn rank(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    /// `Tr(U U^†) = ‖U‖_F²`.
    pub fn trace(&self) -> f64 {
        self.entries.norm_squared()
    }

    /// Materializes `U U^†`; only meant for oracle-scale dimensions.
    pub fn density(&self) -> CMatrix {
        &self.entries * self.entries.adjoint()
    }

    /// Binary layout: little-endian `u64` n, `u64` r, then `d·r` `(re, im)` pairs of
    /// `f64` in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.rank() as u64).to_le_bytes())?;
        for row in 0..self.dim() {
            for col in 0..self.rank() {
                let z = self.entries[(row, col)];
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let rank = u64::from_le_bytes(word) as usize;
        if n == 0 || n > MAX_QUBITS || rank == 0 || rank > 1 << n {
            return Err(Error::Parse(format!("bad factor header n={n} r={rank}")));
        }
        let d = 1usize << n;
        let mut entries = CMatrix::zeros(d, rank);
        for row in 0..d {
            for col in 0..rank {
                r.read_exact(&mut word)?;
                let re = f64::from_le_bytes(word);
                r.read_exact(&mut word)?;
                let im = f64::from_le_bytes(word);
                entries[(row, col)] = Complex64::new(re, im);
            }
        }
        Self::new(n, entries)
    }

    /// CSV layout: a header line `n,r`, then one line per row with `re,im` pairs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{}", self.n, self.rank())?;
        for row in 0..self.dim() {
            let fields: Vec<String> = (0..self.rank())
                .flat_map(|col| {
                    let z = self.entries[(row, col)];
                    [format!("{:e}", z.re), format!("{:e}", z.im)]
                })
                .collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty factor file".into()))??;
        let dims: Vec<usize> = header
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        let [n, rank] = dims[..] else {
            return Err(Error::Parse(format!("bad factor header {header:?}")));
        };
        if n == 0 || n > MAX_QUBITS || rank == 0 {
            return Err(Error::Parse(format!("bad factor header {header:?}")));
        }
        let d = 1usize << n;
        let mut entries = CMatrix::zeros(d, rank);
        for row in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("factor file ends at row {row}")))??;
            let values: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if values.len() != 2 * rank {
                return Err(Error::Parse(format!("row {row} has {} values", values.len())));
            }
            for col in 0..rank {
                entries[(row, col)] = Complex64::new(values[2 * col], values[2 * col + 1]);
            }
        }
        Self::new(n, entries)
    }
}

/// `(|0…0⟩ + |1…1⟩)/√2` as a `d × 1` factor.
pub fn ghz_factor(n: usize) -> Result<DensityFactor> {
    if n == 0 {
        return Err(invalid("GHZ state needs at least one qubit"));
    }
    if n > MAX_QUBITS {
        return Err(invalid(format!("qubit count {n} out of range")));
    }
    let d = 1usize << n;
    let mut u = CMatrix::zeros(d, 1);
    let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    u[(0, 0)] = amp;
    u[(d - 1, 0)] = amp;
    DensityFactor::new(n, u)
}

/// I.i.d. complex Gaussian entries rescaled to unit trace.
pub fn random_state_factor(n: usize, r: usize, seed: u64) -> Result<DensityFactor> {
    if n == 0 || n > MAX_QUBITS {
        return Err(invalid(format!("qubit count {n} out of range")));
    }
    let d = 1usize << n;
    if r == 0 || r > d {
        return Err(invalid(format!("rank {r} must lie in [1, {d}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = DMatrix::from_fn(d, r, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im)
    });
    let norm = u.norm();
    u /= Complex64::new(norm, 0.0);
    DensityFactor::new(n, u)
}

/// `‖U U^† − V V^†‖_F²` without forming `d × d` matrices. The ranks of `U` and `V` may differ.
///
/// With `[U V] = Q [R_U R_V]` the error equals `‖R_U R_U^† − R_V R_V^†‖_F²`, which keeps
/// full relative accuracy when `U U^† ≈ V V^†` (the Gram-matrix identity does not).
pub fn recon_error(u: &CMatrix, v: &CMatrix) -> Result<f64> {
    if u.nrows() != v.nrows() {
        return Err(dim_mismatch(format!("factor rows {} vs {}", u.nrows(), v.nrows())));
    }
    let (r1, r2) = (u.ncols(), v.ncols());
    let mut stacked = CMatrix::zeros(u.nrows(), r1 + r2);
    stacked.columns_mut(0, r1).copy_from(u);
    stacked.columns_mut(r1, r2).copy_from(v);
    let r = stacked.qr().r();
    let ru = r.columns(0, r1);
    let rv = r.columns(r1, r2);
    Ok((ru * ru.adjoint() - rv * rv.adjoint()).norm_squared())
}

/// How a target state is built; stored in manifests so runs can be reproduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Ghz { qubits: usize },
    Random { qubits: usize, rank: usize, seed: u64 },
}

impl TargetSpec {
    pub fn qubits(&self) -> usize {
        match self {
            TargetSpec::Ghz { qubits } | TargetSpec::Random { qubits, .. } => *qubits,
        }
    }

    pub fn build(&self) -> Result<DensityFactor> {
        match *self {
            TargetSpec::Ghz { qubits } => ghz_factor(qubits),
            TargetSpec::Random { qubits, rank, seed } => random_state_factor(qubits, rank, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram;
    use crate::pauli::{sense_expectation, PauliString};
    use crate::random::{random_matrix, random_unitary, rng};
    use proptest::prelude::*;

    #[test]
    fn ghz_one_qubit_is_plus_state() {
        let u = ghz_factor(1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(u.entries().as_slice(), &[Complex64::new(h, 0.0), Complex64::new(h, 0.0)]);
    }

    #[test]
    fn ghz_three_qubits_support() {
        let u = ghz_factor(3).unwrap();
        let nonzero: Vec<usize> = (0..8).filter(|&k| u.entries()[(k, 0)].norm() > 0.0).collect();
        assert_eq!(nonzero, vec![0, 7]);
        for n in 1..=10 {
            assert!((ghz_factor(n).unwrap().trace() - 1.0).abs() < 1e-15);
        }
        assert!(ghz_factor(0).is_err());
    }

    #[test]
    fn ghz_parity_expectations() {
        for n in 1..=4 {
            let u = ghz_factor(n).unwrap();
            let zs: PauliString = "Z".repeat(n).parse().unwrap();
            let xs: PauliString = "X".repeat(n).parse().unwrap();
            let ez = sense_expectation(&zs, u.entries()).unwrap();
            let ex = sense_expectation(&xs, u.entries()).unwrap();
            let dense = u.density();
            let oz = (crate::pauli::dense_pauli(&zs).unwrap() * &dense).trace().re;
            assert!((ez - oz).abs() < 1e-12);
            assert!((ex - 1.0).abs() < 1e-12);
            // Z…Z has eigenvalue (-1)^n on |1…1⟩, so it averages to 1 only for even n.
            let expected_z = if n % 2 == 0 { 1.0 } else { 0.0 };
            assert!((ez - expected_z).abs() < 1e-12, "n={n}: {ez}");
        }
    }

    #[test]
    fn random_factor_is_normalized_and_deterministic() {
        let a = random_state_factor(1, 2, 9).unwrap();
        assert!((a.trace() - 1.0).abs() < 1e-12);
        let rho = a.density();
        let eig = rho.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > 1e-6), "full rank");
        assert_eq!(a, random_state_factor(1, 2, 9).unwrap());
        assert_ne!(a, random_state_factor(1, 2, 10).unwrap());
        let b = random_state_factor(4, 3, 1).unwrap();
        assert!((gram(b.entries()).trace().re - 1.0).abs() < 1e-12);
        assert!(random_state_factor(1, 3, 0).is_err());
    }

    #[test]
    fn recon_error_matches_dense() {
        let mut g = rng(21);
        let u = random_matrix(&mut g, 8, 2);
        let v = random_matrix(&mut g, 8, 2);
        let dense = (&u * u.adjoint() - &v * v.adjoint()).norm_squared();
        assert!((recon_error(&u, &v).unwrap() - dense).abs() < 1e-10);
        assert!(recon_error(&u, &u).unwrap() < 1e-26);
        let nearby = &u + random_matrix(&mut g, 8, 2) * Complex64::new(1e-9, 0.0);
        let tiny = (&u * u.adjoint() - &nearby * nearby.adjoint()).norm_squared();
        assert!((recon_error(&u, &nearby).unwrap() - tiny).abs() < 1e-6 * tiny);
        assert!(recon_error(&u, &CMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn factor_files_round_trip() {
        let u = random_state_factor(3, 2, 4).unwrap();
        let mut bin = Vec::new();
        u.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 16 + 8 * 2 * 16);
        assert_eq!(DensityFactor::read_binary(bin.as_slice()).unwrap(), u);

        let mut csv = Vec::new();
        u.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv.clone()).unwrap();
        assert!(text.starts_with("3,2\n"));
        assert_eq!(DensityFactor::read_csv(csv.as_slice()).unwrap(), u);
        assert!(DensityFactor::read_csv("3,2\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn recon_error_is_symmetric_and_gauge_invariant(seed in any::<u64>(), r in 1usize..=3) {
            let mut g = rng(seed);
            let u = random_matrix(&mut g, 8, r);
            let v = random_matrix(&mut g, 8, r);
            let q = random_unitary(&mut g, r);
            let uv = recon_error(&u, &v).unwrap();
            prop_assert!(uv >= 0.0);
            prop_assert!((uv - recon_error(&v, &u).unwrap()).abs() < 1e-10);
            prop_assert!(recon_error(&u, &(&u * &q)).unwrap() < 1e-10);
        }
    }
}
