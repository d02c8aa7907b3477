//! Shared numerics: a restarted Krylov solver for lowest eigenpairs of
//! Hermitian operators (matrix-free), and thin SVD/QR wrappers bridging
//! `ndarray` storage to `nalgebra` factorizations.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{MagicError, Result};

/// Scalar abstraction so the same Krylov code runs on real and complex
/// amplitude vectors.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn norm_sqr(self) -> f64;
    fn scale(self, s: f64) -> Self;
    /// Hermitian eigendecomposition of a small dense matrix in row-major
    /// storage; returns eigenvalues ascending with their vectors.
    fn eigh(mat: &[Self], dim: usize) -> (Vec<f64>, Vec<Vec<Self>>);
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn eigh(mat: &[Self], dim: usize) -> (Vec<f64>, Vec<Vec<Self>>) {
        let m = DMatrix::from_fn(dim, dim, |i, j| mat[i * dim + j]);
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigen();
        sort_eig(eig.eigenvalues.as_slice(), |i, j| eig.eigenvectors[(j, i)])
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn eigh(mat: &[Self], dim: usize) -> (Vec<f64>, Vec<Vec<Self>>) {
        let m = DMatrix::from_fn(dim, dim, |i, j| mat[i * dim + j]);
        let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = m.symmetric_eigen();
        sort_eig(eig.eigenvalues.as_slice(), |i, j| eig.eigenvectors[(j, i)])
    }
}

fn sort_eig<S: Scalar>(vals: &[f64], vec_elem: impl Fn(usize, usize) -> S) -> (Vec<f64>, Vec<Vec<S>>) {
    let dim = vals.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let vecs: Vec<Vec<S>> = order
        .iter()
        .map(|&i| (0..dim).map(|j| vec_elem(i, j)).collect())
        .collect();
    (sorted_vals, vecs)
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

pub fn norm<S: Scalar>(a: &[S]) -> f64 {
    a.iter().map(|&x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy<S: Scalar>(y: &mut [S], alpha: S, x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale_in_place<S: Scalar>(v: &mut [S], s: f64) {
    for x in v.iter_mut() {
        *x = x.scale(s);
    }
}

pub struct EigenPair<S> {
    pub value: f64,
    pub vector: Vec<S>,
    pub residual: f64,
    pub matvecs: usize,
    /// Whether the scale-aware residual target was met.
    pub converged: bool,
}

/// Lowest eigenpair of a Hermitian operator by restarted Rayleigh–Ritz with
/// full reorthogonalization inside each Krylov block.
///
/// `apply` computes `out = H·x`; `project`, when given, re-imposes an exact
/// symmetry constraint (a diagonal sector mask) on every new basis vector.
pub fn lowest_eigenpair<S: Scalar>(
    apply: &mut dyn FnMut(&[S], &mut [S]),
    start: Vec<S>,
    basis_size: usize,
    tol: f64,
    max_restarts: usize,
    project: Option<&dyn Fn(&mut [S])>,
) -> Result<EigenPair<S>> {
    let dim = start.len();
    let m = basis_size.clamp(2, dim.max(2));
    let keep = 3.min(m - 1);
    let mut matvecs = 0usize;

    let mut seeds: Vec<Vec<S>> = vec![start];
    let mut best: Option<(f64, Vec<S>, f64)> = None;

    for _restart in 0..max_restarts {
        // orthonormal basis, seeded by the kept Ritz vectors
        let mut basis: Vec<Vec<S>> = Vec::with_capacity(m);
        for mut s in seeds.drain(..) {
            if let Some(p) = project {
                p(&mut s);
            }
            orthogonalize(&mut s, &basis);
            let nrm = norm(&s);
            if nrm > 1e-12 {
                scale_in_place(&mut s, 1.0 / nrm);
                basis.push(s);
            }
        }
        if basis.is_empty() {
            return Err(MagicError::NoConvergence(
                "start vector vanished under the sector projection".into(),
            ));
        }

        // B[i][j] = v_i† H v_j, built column by column while expanding
        let mut b = vec![S::zero(); m * m];
        let mut w = vec![S::zero(); dim];
        let mut ncols = 0usize;
        while ncols < basis.len() {
            apply(&basis[ncols], &mut w);
            matvecs += 1;
            if let Some(p) = project {
                p(&mut w);
            }
            for i in 0..basis.len() {
                let c = dot(&basis[i], &w);
                b[i * m + ncols] = c;
                b[ncols * m + i] = c.conj();
            }
            ncols += 1;
            if ncols == basis.len() && basis.len() < m {
                // expand the Krylov space from the latest H·v
                let mut new_vec = w.clone();
                orthogonalize(&mut new_vec, &basis);
                orthogonalize(&mut new_vec, &basis);
                let nrm = norm(&new_vec);
                if nrm > 1e-10 {
                    scale_in_place(&mut new_vec, 1.0 / nrm);
                    basis.push(new_vec);
                }
            }
        }

        let k = basis.len();
        let mut bk = vec![S::zero(); k * k];
        for i in 0..k {
            for j in 0..k {
                bk[i * k + j] = b[i * m + j];
            }
        }
        let (vals, vecs) = S::eigh(&bk, k);

        // Ritz vector for the lowest value, plus kept seeds for the restart
        let ritz = |y: &[S]| -> Vec<S> {
            let mut x = vec![S::zero(); dim];
            for (c, v) in y.iter().zip(&basis) {
                axpy(&mut x, *c, v);
            }
            x
        };
        let x0 = ritz(&vecs[0]);
        apply(&x0, &mut w);
        matvecs += 1;
        let lambda = vals[0];
        let mut res = 0.0f64;
        for (wi, xi) in w.iter().zip(&x0) {
            let r = *wi - xi.scale(lambda);
            res += r.norm_sqr();
        }
        let res = res.sqrt();
        // scale-aware: an absolute residual below ‖H‖·ε is unreachable in f64
        let done = res <= tol * 1.0f64.max(lambda.abs());
        best = Some((lambda, x0.clone(), res));
        if done {
            return Ok(EigenPair {
                value: lambda,
                vector: x0,
                residual: res,
                matvecs,
                converged: true,
            });
        }
        seeds.push(x0);
        for vec_idx in 1..keep.min(k) {
            seeds.push(ritz(&vecs[vec_idx]));
        }
    }

    // best Ritz pair so far; callers that need the residual target enforce it
    let (value, vector, residual) = best.unwrap();
    Ok(EigenPair { value, vector, residual, matvecs, converged: false })
}

fn orthogonalize<S: Scalar>(v: &mut [S], basis: &[Vec<S>]) {
    for u in basis {
        let c = dot(u, v);
        let neg = S::zero() - c;
        axpy(v, neg, u);
    }
}

// ---------------------------------------------------------------------------
// ndarray <-> nalgebra bridges

pub fn svd_c64(a: &Array2<Complex64>) -> Result<(Array2<Complex64>, Vec<f64>, Array2<Complex64>)> {
    let (rows, cols) = a.dim();
    let m = DMatrix::from_fn(rows, cols, |i, j| a[(i, j)]);
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| MagicError::NoConvergence("svd: no U".into()))?;
    let vt = svd.v_t.ok_or_else(|| MagicError::NoConvergence("svd: no Vt".into()))?;
    let k = svd.singular_values.len();
    let u_nd = Array2::from_shape_fn((rows, k), |(i, j)| u[(i, j)]);
    let vt_nd = Array2::from_shape_fn((k, cols), |(i, j)| vt[(i, j)]);
    Ok((u_nd, svd.singular_values.as_slice().to_vec(), vt_nd))
}

/// Thin QR of a tall (or square) complex matrix: `a = q · r` with
/// `q† q = I`.
pub fn qr_thin_c64(a: &Array2<Complex64>) -> (Array2<Complex64>, Array2<Complex64>) {
    let (rows, cols) = a.dim();
    let m = DMatrix::from_fn(rows, cols, |i, j| a[(i, j)]);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    let k = q.ncols();
    (
        Array2::from_shape_fn((rows, k), |(i, j)| q[(i, j)]),
        Array2::from_shape_fn((k, cols), |(i, j)| r[(i, j)]),
    )
}

/// Solve the small dense least-squares problem `a x = y` via normal
/// equations with ridge damping; used by the spline fit in the collapse
/// score.
pub fn solve_least_squares(a: &Array2<f64>, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let (rows, cols) = a.dim();
    if y.len() != rows {
        return Err(MagicError::ShapeMismatch("least squares rhs".into()));
    }
    let mut ata = DMatrix::<f64>::zeros(cols, cols);
    let mut aty = DVector::<f64>::zeros(cols);
    for i in 0..rows {
        for j in 0..cols {
            aty[j] += a[(i, j)] * y[i];
            for k in 0..cols {
                ata[(j, k)] += a[(i, j)] * a[(i, k)];
            }
        }
    }
    for j in 0..cols {
        ata[(j, j)] += ridge;
    }
    ata.lu()
        .solve(&aty)
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| MagicError::Analysis("singular normal equations".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn krylov_matches_dense_eigen_real() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 40;
        let mut m = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let (vals, _) = f64::eigh(&m, n);
        let start: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = (0..n).map(|j| m[i * n + j] * x[j]).sum();
            }
        };
        let pair = lowest_eigenpair(&mut apply, start, 12, 1e-10, 200, None).unwrap();
        assert!((pair.value - vals[0]).abs() < 1e-9, "{} vs {}", pair.value, vals[0]);
        assert!(pair.residual <= 1e-10);
    }

    #[test]
    fn krylov_matches_dense_eigen_complex() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 30;
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..i {
                let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                m[i * n + j] = v;
                m[j * n + i] = v.conj();
            }
            m[i * n + i] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        }
        let (vals, _) = Complex64::eigh(&m, n);
        let start: Vec<Complex64> =
            (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mut apply = |x: &[Complex64], out: &mut [Complex64]| {
            for i in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    acc += m[i * n + j] * x[j];
                }
                out[i] = acc;
            }
        };
        let pair = lowest_eigenpair(&mut apply, start, 10, 1e-10, 300, None).unwrap();
        assert!((pair.value - vals[0]).abs() < 1e-8);
    }

    #[test]
    fn svd_reconstructs() {
        let a = Array2::from_shape_fn((6, 4), |(i, j)| {
            Complex64::new((i * 3 + j) as f64 * 0.2 - 1.0, (j + 1) as f64 * 0.1)
        });
        let (u, s, vt) = svd_c64(&a).unwrap();
        let mut rec = Array2::<Complex64>::zeros((6, 4));
        for i in 0..6 {
            for j in 0..4 {
                for k in 0..s.len() {
                    rec[(i, j)] += u[(i, k)] * s[k] * vt[(k, j)];
                }
            }
        }
        let err: f64 = (&rec - &a).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-12);
    }

    #[test]
    fn qr_is_isometry() {
        let a = Array2::from_shape_fn((8, 3), |(i, j)| {
            Complex64::new((i + 2 * j) as f64 * 0.3 - 1.0, (i as f64 - j as f64) * 0.2)
        });
        let (q, r) = qr_thin_c64(&a);
        // q† q = I
        for c1 in 0..3 {
            for c2 in 0..3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..8 {
                    acc += q[(i, c1)].conj() * q[(i, c2)];
                }
                let expect = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((acc - expect).norm() < 1e-12);
            }
        }
        // q r = a
        let rec = q.dot(&r);
        let err: f64 = (&rec - &a).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-12);
    }
}
