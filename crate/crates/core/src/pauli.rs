//! Matrix-free n-qubit Pauli observables and the sensing map.
//!
//! Qubit 0 is the most significant bit of a computational-basis index, so the
//! string `"XZ"` acts as `X ⊗ Z` on `|q0 q1⟩` and `dense_pauli` is the plain
//! left-to-right Kronecker product.
//!
//! A Pauli string maps basis state `i` to `j = i ^ x_mask` with phase
//! `i^{#Y} · (-1)^{popcount(i & z_mask)}`, where `x_mask` marks X/Y axes and
//! `z_mask` marks Y/Z axes. The power of `i` is tracked as an integer and
//! applied once per amplitude.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::CMatrix;

/// Largest qubit count accepted by [`PauliString`]; basis indices must fit in a `usize`
/// and a state vector of `2^n` amplitudes must be allocatable.
pub const MAX_QUBITS: usize = 30;

/// Default cap on qubits for explicit `d × d` materialization.
pub const DENSE_QUBIT_CAP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn matrix(self) -> CMatrix {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => DMatrix::from_row_slice(2, 2, &[l, o, o, l]),
            Pauli::X => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
            Pauli::Y => DMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
            Pauli::Z => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
        }
    }
}

/// A Kronecker product of single-qubit Pauli matrices.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    axes: Vec<Pauli>,
    x_mask: usize,
    z_mask: usize,
    y_count: u32,
}

impl PauliString {
    pub fn new(axes: Vec<Pauli>) -> Result<Self> {
        let n = axes.len();
        if n == 0 {
            return Err(invalid("a Pauli string needs at least one qubit"));
        }
        if n > MAX_QUBITS {
            return Err(invalid(format!("{n} qubits exceeds the limit of {MAX_QUBITS}")));
        }
        let mut x_mask = 0usize;
        let mut z_mask = 0usize;
        let mut y_count = 0u32;
        for (q, axis) in axes.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match axis {
                Pauli::I => {}
                Pauli::X => x_mask |= bit,
                Pauli::Z => z_mask |= bit,
                Pauli::Y => {
                    x_mask |= bit;
                    z_mask |= bit;
                    y_count += 1;
                }
            }
        }
        Ok(Self {
            axes,
            x_mask,
            z_mask,
            y_count,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![Pauli::I; n])
    }

    /// The string whose digits, read base 4 with qubit 0 most significant, equal `index`
    /// (digit order `I, X, Y, Z`).
    pub fn from_index(n: usize, index: u64) -> Result<Self> {
        if n > 31 || index >= 1u64 << (2 * n) {
            return Err(invalid(format!("index {index} out of range for {n} qubits")));
        }
        let axes = (0..n)
            .map(|q| Pauli::ALL[((index >> (2 * (n - 1 - q))) & 3) as usize])
            .collect();
        Self::new(axes)
    }

    /// All `4^n` strings in [`PauliString::from_index`] order.
    pub fn all(n: usize) -> Result<Vec<Self>> {
        if n == 0 || n > 10 {
            return Err(invalid(format!("enumerating 4^{n} strings is not supported")));
        }
        (0..1u64 << (2 * n)).map(|k| Self::from_index(n, k)).collect()
    }

    pub fn num_qubits(&self) -> usize {
        self.axes.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.axes.len()
    }

    pub fn axes(&self) -> &[Pauli] {
        &self.axes
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    pub fn y_count(&self) -> u32 {
        self.y_count
    }

    /// `i^{#Y}`, the global phase of every nonzero entry before the Z-type signs.
    fn phase(&self) -> Complex64 {
        let quarter_turns = if fault::phase_fault_active() {
            // conjugated Y convention, used only as a negative control
            (4 - self.y_count % 4) % 4
        } else {
            self.y_count % 4
        };
        match quarter_turns {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

    #[inline]
    fn sign(&self, input: usize) -> f64 {
        if (input & self.z_mask).count_ones() & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.axes.iter().map(|a| a.as_char()).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let axes = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                other => Err(Error::Parse(format!("invalid Pauli axis {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }
}

impl TryFrom<String> for PauliString {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PauliString> for String {
    fn from(p: PauliString) -> String {
        p.to_string()
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Amplitudes of a pure state (or one column of a factor).
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(Vec<Complex64>);

impl StateVector {
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        if amps.is_empty() || !amps.len().is_power_of_two() {
            return Err(invalid(format!("state length {} is not a power of two", amps.len())));
        }
        Ok(Self(amps))
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        let d = 1usize << n;
        if index >= d {
            return Err(invalid(format!("basis index {index} out of range for {n} qubits")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); d];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self(amps))
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

#[inline]
fn check_len(p: &PauliString, len: usize) -> Result<()> {
    if len != p.dim() {
        return Err(dim_mismatch(format!(
            "Pauli string {p} acts on dimension {}, got {len}",
            p.dim()
        )));
    }
    Ok(())
}

/// `out[j] += weight · (P v)[j]` for a single column.
#[inline]
pub(crate) fn accumulate_column(p: &PauliString, weight: f64, v: &[Complex64], out: &mut [Complex64]) {
    let scale = p.phase() * weight;
    let x = p.x_mask;
    for (j, o) in out.iter_mut().enumerate() {
        let i = j ^ x;
        *o += scale * v[i] * p.sign(i);
    }
}

/// `⟨u, P u⟩` for a single column, real part only.
#[inline]
pub(crate) fn column_expectation(p: &PauliString, u: &[Complex64]) -> Complex64 {
    let x = p.x_mask;
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, uj) in u.iter().enumerate() {
        let i = j ^ x;
        acc += uj.conj() * u[i] * p.sign(i);
    }
    acc * p.phase()
}

/// `P · v` without materializing `P`.
pub fn pauli_apply(p: &PauliString, v: &StateVector) -> Result<StateVector> {
    check_len(p, v.0.len())?;
    let mut out = vec![Complex64::new(0.0, 0.0); v.0.len()];
    accumulate_column(p, 1.0, &v.0, &mut out);
    Ok(StateVector(out))
}

/// `Tr(P U U^†) = Σ_c ⟨u_c, P u_c⟩`.
pub fn sense_expectation(p: &PauliString, u: &CMatrix) -> Result<f64> {
    check_len(p, u.nrows())?;
    Ok(expectation_unchecked(p, u))
}

pub(crate) fn expectation_unchecked(p: &PauliString, u: &CMatrix) -> f64 {
    let d = u.nrows();
    let data = u.as_slice();
    let mut total = Complex64::new(0.0, 0.0);
    for col in data.chunks_exact(d) {
        total += column_expectation(p, col);
    }
    debug_assert!(
        total.im.abs() <= 1e-10 || total.im.abs() <= 1e-10 * u.norm_squared(),
        "Hermitian expectation has imaginary part {}",
        total.im
    );
    total.re
}

/// `(Σ_k w_k P_k) · V`, column by column, in `O(m d r)`.
pub fn weighted_adjoint_apply(strings: &[PauliString], weights: &[f64], v: &CMatrix) -> Result<CMatrix> {
    if strings.len() != weights.len() {
        return Err(dim_mismatch(format!(
            "{} strings but {} weights",
            strings.len(),
            weights.len()
        )));
    }
    for p in strings {
        check_len(p, v.nrows())?;
    }
    let mut out = CMatrix::zeros(v.nrows(), v.ncols());
    accumulate_weighted(strings.iter().zip(weights.iter().copied()), v, &mut out);
    Ok(out)
}

/// Adds `Σ w P · V` into `out`. Callers guarantee matching dimensions.
pub(crate) fn accumulate_weighted<'a>(
    terms: impl IntoIterator<Item = (&'a PauliString, f64)>,
    v: &CMatrix,
    out: &mut CMatrix,
) {
    let d = v.nrows();
    for (p, w) in terms {
        if w == 0.0 {
            continue;
        }
        for (src, dst) in v.as_slice().chunks_exact(d).zip(out.as_mut_slice().chunks_exact_mut(d)) {
            accumulate_column(p, w, src, dst);
        }
    }
}

/// Explicit Kronecker product of the 2×2 factors. Capped at [`DENSE_QUBIT_CAP`] qubits.
pub fn dense_pauli(p: &PauliString) -> Result<CMatrix> {
    dense_pauli_capped(p, DENSE_QUBIT_CAP)
}

pub fn dense_pauli_capped(p: &PauliString, cap: usize) -> Result<CMatrix> {
    if p.num_qubits() > cap {
        return Err(Error::SizeCap {
            qubits: p.num_qubits(),
            cap,
        });
    }
    let mut acc = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    for axis in &p.axes {
        acc = acc.kronecker(&axis.matrix());
    }
    Ok(acc)
}

/// A real-weighted sum of Pauli strings, `Σ_k w_k P_k`, as a Hermitian operator.
#[derive(Clone, Debug)]
pub struct PauliSum {
    n: usize,
    terms: Vec<(PauliString, f64)>,
}

impl PauliSum {
    pub fn new(n: usize, terms: Vec<(PauliString, f64)>) -> Result<Self> {
        if let Some((p, _)) = terms.iter().find(|(p, _)| p.num_qubits() != n) {
            return Err(dim_mismatch(format!("string {p} is not on {n} qubits")));
        }
        Ok(Self { n, terms })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn terms(&self) -> &[(PauliString, f64)] {
        &self.terms
    }

    /// `Σ |w_k|`, an upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w.abs()).sum()
    }

    pub fn apply(&self, v: &CMatrix) -> Result<CMatrix> {
        if v.nrows() != self.dim() {
            return Err(dim_mismatch(format!(
                "operator dimension {} vs {} rows",
                self.dim(),
                v.nrows()
            )));
        }
        let mut out = CMatrix::zeros(v.nrows(), v.ncols());
        accumulate_weighted(self.terms.iter().map(|(p, w)| (p, *w)), v, &mut out);
        Ok(out)
    }

    /// Each string has exactly one nonzero per row, so this costs `O(m d)`.
    pub fn to_dense(&self) -> Result<CMatrix> {
        if self.n > DENSE_QUBIT_CAP {
            return Err(Error::SizeCap {
                qubits: self.n,
                cap: DENSE_QUBIT_CAP,
            });
        }
        let d = self.dim();
        let mut s = CMatrix::zeros(d, d);
        for (p, w) in &self.terms {
            let scale = p.phase() * *w;
            for j in 0..d {
                let i = j ^ p.x_mask;
                s[(j, i)] += scale * p.sign(i);
            }
        }
        Ok(s)
    }
}

/// Scoped corruption of the Y phase convention, for checking that the
/// validation suites detect a broken kernel. Thread-local, so concurrent
/// callers are unaffected.
pub mod fault {
    use super::Cell;

    thread_local! {
        static PHASE_FAULT: Cell<bool> = const { Cell::new(false) };
    }

    pub(super) fn phase_fault_active() -> bool {
        PHASE_FAULT.with(Cell::get)
    }

    /// Conjugates the `i^{#Y}` phase on this thread until the guard is dropped.
    pub fn inject_phase_fault() -> PhaseFaultGuard {
        let previous = PHASE_FAULT.with(|f| f.replace(true));
        PhaseFaultGuard { previous }
    }

    #[must_use = "the fault is cleared when the guard drops"]
    pub struct PhaseFaultGuard {
        previous: bool,
    }

    impl Drop for PhaseFaultGuard {
        fn drop(&mut self) {
            PHASE_FAULT.with(|f| f.set(self.previous));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_matrix, random_string, rng};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn dense_apply(p: &PauliString, v: &StateVector) -> Vec<Complex64> {
        let m = dense_pauli(p).unwrap();
        let x = nalgebra::DVector::from_column_slice(v.amps());
        (m * x).as_slice().to_vec()
    }

    #[test]
    fn identity_leaves_vector_unchanged() {
        let v = StateVector::new(vec![c(0.1, 0.2), c(-0.3, 0.0), c(0.5, -0.5), c(1.0, 2.0)]).unwrap();
        assert_eq!(pauli_apply(&ps("II"), &v).unwrap(), v);
    }

    #[test]
    fn z_flips_sign_of_one() {
        let e1 = StateVector::basis(1, 1).unwrap();
        let out = pauli_apply(&ps("Z"), &e1).unwrap();
        assert_eq!(out.amps(), &[c(0.0, 0.0), c(-1.0, 0.0)]);
    }

    #[test]
    fn xx_maps_e0_to_e3() {
        let out = pauli_apply(&ps("XX"), &StateVector::basis(2, 0).unwrap()).unwrap();
        assert_eq!(out, StateVector::basis(2, 3).unwrap());
    }

    #[test]
    fn yi_on_e0_matches_kronecker() {
        let e0 = StateVector::basis(2, 0).unwrap();
        let out = pauli_apply(&ps("YI"), &e0).unwrap();
        let expected = dense_apply(&ps("YI"), &e0);
        assert_eq!(out.amps(), expected.as_slice());
        assert_eq!(out.amps()[2], c(0.0, 1.0));
    }

    #[test]
    fn dense_pauli_small_cases() {
        let i2 = dense_pauli(&ps("I")).unwrap();
        assert_eq!(i2, CMatrix::identity(2, 2));
        let y = dense_pauli(&ps("Y")).unwrap();
        assert_eq!(y[(0, 1)], c(0.0, -1.0));
        assert_eq!(y[(1, 0)], c(0.0, 1.0));
        assert_eq!(y[(0, 0)], c(0.0, 0.0));
        let zz = dense_pauli(&ps("ZZ")).unwrap();
        let diag: Vec<f64> = (0..4).map(|k| zz[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(zz.norm_squared(), 4.0);
    }

    #[test]
    fn dense_pauli_respects_cap() {
        let p = PauliString::identity(9).unwrap();
        assert!(matches!(dense_pauli(&p), Err(Error::SizeCap { qubits: 9, cap: 8 })));
        assert!(dense_pauli_capped(&PauliString::identity(3).unwrap(), 2).is_err());
    }

    #[test]
    fn dense_strings_are_hermitian_unitary() {
        for p in PauliString::all(2).unwrap() {
            let m = dense_pauli(&p).unwrap();
            assert_eq!(m.adjoint(), m);
            assert_eq!(&m * &m, CMatrix::identity(4, 4));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let v = StateVector::basis(3, 0).unwrap();
        assert!(matches!(pauli_apply(&ps("XX"), &v), Err(Error::DimensionMismatch(_))));
        let u = CMatrix::zeros(4, 1);
        assert!(sense_expectation(&ps("X"), &u).is_err());
        assert!(weighted_adjoint_apply(&[ps("XX")], &[1.0, 2.0], &u).is_err());
    }

    #[test]
    fn parse_and_display_round_trip() {
        let p = ps("XZYI");
        assert_eq!(p.to_string(), "XZYI");
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"XZYI\"");
        let back: PauliString = serde_json::from_str("\"XZYI\"").unwrap();
        assert_eq!(back, p);
        assert!("".parse::<PauliString>().is_err());
        assert!("XQ".parse::<PauliString>().is_err());
        assert!(StateVector::new(vec![c(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn from_index_enumerates_every_string_once() {
        let all = PauliString::all(2).unwrap();
        assert_eq!(all.len(), 16);
        assert_eq!(all[0].to_string(), "II");
        assert_eq!(all[1].to_string(), "IX");
        assert_eq!(all[4].to_string(), "XI");
        assert_eq!(all[15].to_string(), "ZZ");
        let unique: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 16);
    }

    #[test]
    fn identity_weight_scales_v() {
        let mut r = rng(3);
        let v = random_matrix(&mut r, 8, 2);
        let out = weighted_adjoint_apply(&[PauliString::identity(3).unwrap()], &[2.5], &v).unwrap();
        assert!((out - &v * c(2.5, 0.0)).norm() < 1e-15);
        let empty = weighted_adjoint_apply(&[], &[], &v).unwrap();
        assert_eq!(empty, CMatrix::zeros(8, 2));
    }

    #[test]
    fn weighted_apply_matches_dense_sum() {
        let mut r = rng(11);
        let strings: Vec<_> = (0..3).map(|_| random_string(&mut r, 3)).collect();
        let weights = [0.7, -1.3, 0.25];
        let v = random_matrix(&mut r, 8, 2);
        let mut dense = CMatrix::zeros(8, 8);
        for (p, w) in strings.iter().zip(weights) {
            dense += dense_pauli(p).unwrap() * c(w, 0.0);
        }
        let got = weighted_adjoint_apply(&strings, &weights, &v).unwrap();
        assert!((got - dense * &v).norm() < 1e-10);
    }

    #[test]
    fn pauli_sum_dense_matches_apply() {
        let mut r = rng(5);
        let terms: Vec<_> = (0..6).map(|k| (random_string(&mut r, 3), k as f64 - 2.0)).collect();
        let sum = PauliSum::new(3, terms).unwrap();
        let v = random_matrix(&mut r, 8, 3);
        let dense = sum.to_dense().unwrap();
        assert!((dense.adjoint() - &dense).norm() < 1e-14);
        assert!((sum.apply(&v).unwrap() - dense * v).norm() < 1e-12);
    }

    #[test]
    fn phase_fault_is_scoped() {
        let p = ps("Y");
        let e0 = StateVector::basis(1, 0).unwrap();
        {
            let _guard = fault::inject_phase_fault();
            assert_eq!(pauli_apply(&p, &e0).unwrap().amps()[1], c(0.0, -1.0));
        }
        assert_eq!(pauli_apply(&p, &e0).unwrap().amps()[1], c(0.0, 1.0));
    }

    proptest! {
        #[test]
        fn involution_hermiticity_and_dense_agreement(n in 1usize..=4, seed in any::<u64>()) {
            let mut r = rng(seed);
            let p = random_string(&mut r, n);
            let d = 1 << n;
            let v = StateVector::new(random_matrix(&mut r, d, 1).as_slice().to_vec()).unwrap();
            let w = StateVector::new(random_matrix(&mut r, d, 1).as_slice().to_vec()).unwrap();

            let pv = pauli_apply(&p, &v).unwrap();
            let ppv = pauli_apply(&p, &pv).unwrap();
            for (a, b) in ppv.amps().iter().zip(v.amps()) {
                prop_assert!((a - b).norm() < 1e-12);
            }

            let pw = pauli_apply(&p, &w).unwrap();
            let lhs: Complex64 = w.amps().iter().zip(pv.amps()).map(|(a, b)| a.conj() * b).sum();
            let rhs: Complex64 = v.amps().iter().zip(pw.amps()).map(|(a, b)| a.conj() * b).sum();
            prop_assert!((lhs - rhs.conj()).norm() < 1e-12);

            let dense = dense_apply(&p, &v);
            for (a, b) in pv.amps().iter().zip(&dense) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn expectation_bounded_by_trace(n in 1usize..=4, r in 1usize..=3, seed in any::<u64>()) {
            let mut g = rng(seed);
            let p = random_string(&mut g, n);
            let u = random_matrix(&mut g, 1 << n, r);
            let t = sense_expectation(&p, &u).unwrap();
            prop_assert!(t.abs() <= u.norm_squared() * (1.0 + 1e-12));
        }

        #[test]
        fn weighted_apply_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut g = rng(seed);
            let strings: Vec<_> = (0..4).map(|_| random_string(&mut g, 3)).collect();
            let w1: Vec<f64> = (0..4).map(|k| k as f64 * 0.3 - 0.5).collect();
            let w2: Vec<f64> = (0..4).map(|k| 1.0 - k as f64 * 0.2).collect();
            let v1 = random_matrix(&mut g, 8, 2);
            let v2 = random_matrix(&mut g, 8, 2);
            let mixed_w: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let lhs = weighted_adjoint_apply(&strings, &mixed_w, &v1).unwrap();
            let rhs = weighted_adjoint_apply(&strings, &w1, &v1).unwrap() * c(a, 0.0)
                + weighted_adjoint_apply(&strings, &w2, &v1).unwrap() * c(b, 0.0);
            prop_assert!((lhs - rhs).norm() < 1e-10);

            let mixed_v = &v1 * c(a, 0.0) + &v2 * c(b, 0.0);
            let lhs = weighted_adjoint_apply(&strings, &w1, &mixed_v).unwrap();
            let rhs = weighted_adjoint_apply(&strings, &w1, &v1).unwrap() * c(a, 0.0)
                + weighted_adjoint_apply(&strings, &w1, &v2).unwrap() * c(b, 0.0);
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }
    }
}
