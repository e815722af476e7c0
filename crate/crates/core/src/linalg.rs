//! Small dense kernels: Gram matrices, the rotation-invariant factor distance,
//! and top-`r` PSD factorization for spectral initialization.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::pauli::PauliSum;
use crate::CMatrix;

/// Tolerance on `max |S − S^†|` accepted by [`top_r_psd_factor`].
pub const HERMITIAN_TOL: f64 = 1e-9;

/// `U^† U`.
pub fn gram(u: &CMatrix) -> CMatrix {
    u.adjoint() * u
}

/// Optimal alignment of `V` onto `U` over `r × r` unitaries.
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    /// `min_R ‖U − V R‖_F²`.
    pub distance_sq: f64,
    /// The minimizing unitary `R*`.
    pub rotation: CMatrix,
}

impl AlignmentResult {
    pub fn distance(&self) -> f64 {
        self.distance_sq.sqrt()
    }
}

/// Procrustes distance between two factors of equal shape.
///
/// With `C = V^† U = W Σ Z^†`, the minimizer is `R* = W Z^†`. The squared distance
/// equals `‖U‖² + ‖V‖² − 2 Σ σ_i(C)`, but that form loses all accuracy near zero,
/// so the residual `‖U − V R*‖²` is returned instead.
pub fn procrustes_distance(u: &CMatrix, v: &CMatrix) -> Result<AlignmentResult> {
    if u.shape() != v.shape() {
        return Err(dim_mismatch(format!("shapes {:?} vs {:?}", u.shape(), v.shape())));
    }
    let c = v.adjoint() * u;
    let svd = c.svd(true, true);
    let (Some(w), Some(z_adj)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        unreachable!("SVD was asked for both singular bases");
    };
    let rotation = w * z_adj;
    let distance_sq = (u - v * &rotation).norm_squared();
    Ok(AlignmentResult {
        distance_sq,
        rotation,
    })
}

/// Procrustes distance after zero-padding the narrower factor, so factors of
/// different rank can be compared.
pub fn padded_distance_sq(u: &CMatrix, v: &CMatrix) -> Result<f64> {
    let r = u.ncols().max(v.ncols());
    let pad = |m: &CMatrix| {
        if m.ncols() == r {
            m.clone()
        } else {
            m.clone().resize_horizontally(r, Complex64::new(0.0, 0.0))
        }
    };
    Ok(procrustes_distance(&pad(u), &pad(v))?.distance_sq)
}

fn hermitian_defect(s: &CMatrix) -> f64 {
    let d = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((s[(i, j)] - s[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Multiplies each column by a unit phase so its largest-magnitude entry
/// (first on ties) is real and nonnegative.
fn fix_column_phases(o: &mut CMatrix) {
    for mut col in o.column_iter_mut() {
        let mut best = 0usize;
        let mut best_norm = -1.0;
        for (k, z) in col.iter().enumerate() {
            let nz = z.norm();
            if nz > best_norm {
                best = k;
                best_norm = nz;
            }
        }
        if best_norm > 0.0 {
            let pivot = col[best];
            let phase = pivot.conj() / pivot.norm();
            col.iter_mut().for_each(|z| *z *= phase);
            col[best] = Complex64::new(col[best].norm(), 0.0);
        }
    }
}

fn assemble_factor(eigs: &[(f64, Vec<Complex64>)], d: usize, r: usize) -> CMatrix {
    let mut out = CMatrix::zeros(d, r);
    for (k, (lambda, vec)) in eigs.iter().take(r).enumerate() {
        let scale = lambda.max(0.0).sqrt();
        for (i, z) in vec.iter().enumerate() {
            out[(i, k)] = z * scale;
        }
    }
    fix_column_phases(&mut out);
    out
}

/// Best rank-`r` PSD factor of a dense Hermitian `S`: the `r` algebraically
/// largest eigenpairs, eigenvalues clamped at zero, columns scaled by `√λ`.
pub fn top_r_psd_factor(s: &CMatrix, r: usize) -> Result<CMatrix> {
    let d = s.nrows();
    if s.ncols() != d {
        return Err(dim_mismatch(format!("matrix is {}x{}", d, s.ncols())));
    }
    if r == 0 || r > d {
        return Err(invalid(format!("rank {r} must lie in [1, {d}]")));
    }
    let defect = hermitian_defect(s);
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    // stable: equal eigenvalues keep the solver's index order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let pairs: Vec<(f64, Vec<Complex64>)> = order
        .iter()
        .take(r)
        .map(|&k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();
    Ok(assemble_factor(&pairs, d, r))
}

/// A Hermitian operator known only through its action on blocks of vectors.
pub trait HermitianOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &CMatrix) -> CMatrix;
}

impl HermitianOperator for PauliSum {
    fn dim(&self) -> usize {
        PauliSum::dim(self)
    }

    fn apply(&self, x: &CMatrix) -> CMatrix {
        PauliSum::apply(self, x).expect("block has the operator's dimension")
    }
}

impl HermitianOperator for CMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &CMatrix) -> CMatrix {
        self * x
    }
}

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Krylov dimension per restart.
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Relative residual `‖S x − θ x‖ / max(1, |θ|)` accepted for a Ritz pair.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 64,
            max_restarts: 200,
            tol: 1e-12,
            seed: 0x5eed,
        }
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn project_out(v: &mut [Complex64], basis: &[Vec<Complex64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
    }
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|z| *z /= norm);
    }
    norm
}

fn apply_vec<Op: HermitianOperator + ?Sized>(op: &Op, v: &[Complex64]) -> Vec<Complex64> {
    let x = CMatrix::from_column_slice(v.len(), 1, v);
    op.apply(&x).as_slice().to_vec()
}

/// Largest eigenpair of `op` restricted to the complement of `locked`, by
/// restarted Lanczos with full reorthogonalization.
fn lanczos_top<Op: HermitianOperator + ?Sized>(
    op: &Op,
    locked: &[Vec<Complex64>],
    start: Vec<Complex64>,
    opts: &LanczosOptions,
) -> (f64, Vec<Complex64>) {
    let d = op.dim();
    let free = d - locked.len();
    let k_max = opts.krylov_dim.min(free).max(1);
    let mut q0 = start;
    project_out(&mut q0, locked);
    if normalize(&mut q0) == 0.0 {
        // start fell inside the locked span; use any complementary basis vector
        for e in 0..d {
            let mut v = vec![Complex64::new(0.0, 0.0); d];
            v[e] = Complex64::new(1.0, 0.0);
            project_out(&mut v, locked);
            if normalize(&mut v) > 1e-8 {
                q0 = v;
                break;
            }
        }
    }

    let mut best = (f64::NEG_INFINITY, q0.clone());
    for _ in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<Complex64>> = vec![q0.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut breakdown = false;
        for j in 0..k_max {
            let mut w = apply_vec(op, &basis[j]);
            let alpha = dot(&basis[j], &w).re;
            alphas.push(alpha);
            project_out(&mut w, locked);
            project_out(&mut w, &basis);
            let beta = normalize(&mut w);
            if j + 1 == k_max {
                betas.push(beta);
                break;
            }
            if beta <= 1e-13 * (1.0 + alpha.abs()) {
                breakdown = true;
                betas.push(0.0);
                break;
            }
            betas.push(beta);
            basis.push(w);
        }
        let k = alphas.len();
        let tri = DMatrix::<f64>::from_fn(k, k, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let eig = tri.symmetric_eigen();
        let top = (0..k)
            .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
            .expect("nonempty tridiagonal");
        let theta = eig.eigenvalues[top];
        let y = eig.eigenvectors.column(top);
        let mut ritz = vec![Complex64::new(0.0, 0.0); d];
        for (coef, q) in y.iter().zip(&basis) {
            ritz.iter_mut().zip(q).for_each(|(x, qi)| *x += qi * *coef);
        }
        project_out(&mut ritz, locked);
        normalize(&mut ritz);
        let residual = (betas[k - 1] * y[k - 1]).abs();
        best = (theta, ritz.clone());
        if breakdown || residual <= opts.tol * theta.abs().max(1.0) {
            break;
        }
        q0 = ritz;
    }
    best
}

/// Matrix-free counterpart of [`top_r_psd_factor`]: eigenpairs are extracted
/// one at a time by Lanczos, deflating previously found eigenvectors.
pub fn top_r_psd_factor_operator<Op: HermitianOperator + ?Sized>(
    op: &Op,
    r: usize,
    opts: &LanczosOptions,
) -> Result<CMatrix> {
    let d = op.dim();
    if r == 0 || r > d {
        return Err(invalid(format!("rank {r} must lie in [1, {d}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut locked: Vec<Vec<Complex64>> = Vec::with_capacity(r);
    let mut pairs = Vec::with_capacity(r);
    for _ in 0..r {
        let start: Vec<Complex64> = (0..d)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let (lambda, v) = lanczos_top(op, &locked, start, opts);
        locked.push(v.clone());
        pairs.push((lambda, v));
    }
    Ok(assemble_factor(&pairs, d, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{PauliString, PauliSum};
    use crate::random::{random_hermitian, random_matrix, random_unitary, rng};
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn gram_cases() {
        assert_eq!(gram(&CMatrix::zeros(8, 2)), CMatrix::zeros(2, 2));
        let mut g = rng(1);
        let q = random_unitary(&mut g, 4);
        let cols = q.columns(0, 2).into_owned();
        assert!((gram(&cols) - CMatrix::identity(2, 2)).norm() < 1e-12);
        let u = random_matrix(&mut g, 8, 2);
        let mut oracle = CMatrix::zeros(2, 2);
        for a in 0..2 {
            for b in 0..2 {
                oracle[(a, b)] = (0..8).map(|i| u[(i, a)].conj() * u[(i, b)]).sum();
            }
        }
        assert!((gram(&u) - oracle).norm() < 1e-12);
    }

    #[test]
    fn procrustes_identity_case() {
        let mut g = rng(2);
        let u = random_matrix(&mut g, 8, 3);
        let a = procrustes_distance(&u, &u).unwrap();
        assert!(a.distance_sq < 1e-12);
        assert!((a.rotation - CMatrix::identity(3, 3)).norm() < 1e-10);
        assert!(procrustes_distance(&u, &CMatrix::zeros(8, 2)).is_err());
    }

    #[test]
    fn procrustes_rank_one_matches_phase_grid() {
        let mut g = rng(3);
        let u = random_matrix(&mut g, 8, 1);
        let v = random_matrix(&mut g, 8, 1);
        let got = procrustes_distance(&u, &v).unwrap().distance_sq;
        let grid = 10_000;
        let brute = (0..grid)
            .map(|k| {
                let phase = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / grid as f64);
                (&u - &v * phase).norm_squared()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((got - brute).abs() < 1e-6, "{got} vs {brute}");
        let closed = u.norm_squared() + v.norm_squared() - 2.0 * (v.adjoint() * &u)[(0, 0)].norm();
        assert!((got - closed).abs() < 1e-12);
    }

    #[test]
    fn top_r_recovers_low_rank_psd() {
        let mut g = rng(4);
        let u = random_matrix(&mut g, 8, 2);
        let rho = &u * u.adjoint();
        let o = top_r_psd_factor(&rho, 2).unwrap();
        assert!((&o * o.adjoint() - &rho).norm() < 1e-9);
    }

    #[test]
    fn top_r_clamps_negative_spectrum() {
        let s = -CMatrix::identity(4, 4);
        assert_eq!(top_r_psd_factor(&s, 3).unwrap(), CMatrix::zeros(4, 3));
    }

    #[test]
    fn top_r_rejects_bad_input() {
        let mut s = CMatrix::identity(4, 4);
        s[(0, 1)] = c(1.0);
        assert!(matches!(top_r_psd_factor(&s, 1), Err(Error::NotHermitian(_))));
        assert!(top_r_psd_factor(&CMatrix::identity(4, 4), 5).is_err());
        assert!(top_r_psd_factor(&CMatrix::zeros(4, 3), 1).is_err());
    }

    #[test]
    fn top_r_columns_are_phase_fixed() {
        let mut g = rng(5);
        let s = random_hermitian(&mut g, 8);
        let o = top_r_psd_factor(&s, 3).unwrap();
        for col in o.column_iter() {
            let pivot = col.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
            assert!(pivot.re >= 0.0 && pivot.im.abs() < 1e-15);
        }
    }

    #[test]
    fn operator_path_matches_dense_path() {
        let mut g = rng(6);
        for n in [3usize, 4] {
            let terms: Vec<_> = (0..12)
                .map(|k| (crate::random::random_string(&mut g, n), (k as f64 * 0.37).sin()))
                .collect();
            let sum = PauliSum::new(n, terms).unwrap();
            let dense = sum.to_dense().unwrap();
            for r in 1..=3 {
                let a = top_r_psd_factor(&dense, r).unwrap();
                let b = top_r_psd_factor_operator(&sum, r, &LanczosOptions::default()).unwrap();
                let diff = (&a * a.adjoint() - &b * b.adjoint()).norm();
                assert!(diff < 1e-8, "n={n} r={r}: {diff}");
            }
        }
    }

    #[test]
    fn operator_path_handles_pure_state_projector() {
        let ghz = crate::states::ghz_factor(5).unwrap();
        let terms: Vec<_> = PauliString::all(5)
            .unwrap()
            .into_iter()
            .map(|p| {
                let t = crate::pauli::sense_expectation(&p, ghz.entries()).unwrap();
                (p, t / 32.0)
            })
            .collect();
        let sum = PauliSum::new(5, terms).unwrap();
        let o = top_r_psd_factor_operator(&sum, 1, &LanczosOptions::default()).unwrap();
        let err = crate::states::recon_error(&o, ghz.entries()).unwrap();
        assert!(err < 1e-18, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn procrustes_properties(seed in any::<u64>(), r in 1usize..=3) {
            let mut g = rng(seed);
            let u = random_matrix(&mut g, 8, r);
            let v = random_matrix(&mut g, 8, r);
            let w = random_matrix(&mut g, 8, r);
            let uv = procrustes_distance(&u, &v).unwrap();
            let vu = procrustes_distance(&v, &u).unwrap();
            prop_assert!((uv.distance_sq - vu.distance_sq).abs() < 1e-10);
            let nuclear: f64 = (v.adjoint() * &u).singular_values().iter().sum();
            let closed = u.norm_squared() + v.norm_squared() - 2.0 * nuclear;
            prop_assert!((closed - uv.distance_sq).abs() < 1e-10);
            let other = random_unitary(&mut g, r);
            prop_assert!(uv.distance_sq <= (&u - &v * other).norm_squared() + 1e-12);
            prop_assert!((uv.rotation.adjoint() * &uv.rotation - CMatrix::identity(r, r)).norm() < 1e-10);
            let uw = procrustes_distance(&u, &w).unwrap().distance();
            let vw = procrustes_distance(&v, &w).unwrap().distance();
            prop_assert!(uw <= uv.distance() + vw + 1e-10);
            let q = random_unitary(&mut g, r);
            prop_assert!(procrustes_distance(&u, &(&u * q)).unwrap().distance() < 1e-10);
        }

        #[test]
        fn top_r_is_best_psd_approximation(seed in any::<u64>(), r in 1usize..=3) {
            let mut g = rng(seed);
            let s = random_hermitian(&mut g, 4);
            let o = top_r_psd_factor(&s, r).unwrap();
            let approx = &o * o.adjoint();
            prop_assert!((approx.adjoint() - &approx).norm() < 1e-12);
            let spectrum = approx.clone().symmetric_eigen().eigenvalues;
            prop_assert!(spectrum.iter().all(|&l| l > -1e-12));
            prop_assert!(spectrum.iter().filter(|&&l| l > 1e-9).count() <= r);
            let best = (&s - &approx).norm();
            for _ in 0..20 {
                let b = random_matrix(&mut g, 4, r);
                let cand = &b * b.adjoint();
                prop_assert!(best <= (&s - cand).norm() + 1e-12);
                // local perturbations of the optimum must not improve either
                let nudged = &o + random_matrix(&mut g, 4, r) * c(1e-3);
                prop_assert!(best <= (&s - &nudged * nudged.adjoint()).norm() + 1e-12);
            }
        }
    }
}
