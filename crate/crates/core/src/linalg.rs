//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gaussian in information form: precision `P` and `P * mean`.
#[derive(Debug, Clone)]
pub struct GaussianInfo<T: Real> {
    pub precision: DMatrix<T>,
    pub rhs: DVector<T>,
}

impl<T: Real> GaussianInfo<T> {
    pub fn new(precision: DMatrix<T>, rhs: DVector<T>) -> Self {
        GaussianInfo { precision, rhs }
    }

    pub fn mean(&self, block: &'static str) -> Result<DVector<T>> {
        Ok(Precision::factor(&self.precision, block)?.mean(&self.rhs))
    }

    pub fn covariance(&self, block: &'static str) -> Result<DMatrix<T>> {
        Ok(Precision::factor(&self.precision, block)?.covariance())
    }

    /// One draw from `N(P⁻¹ rhs, P⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, block: &'static str) -> Result<DVector<T>> {
        Ok(Precision::factor(&self.precision, block)?.sample(&self.rhs, rng))
    }
}

/// Cholesky-factored precision matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct Precision<T: Real> {
    chol: Cholesky<T, Dyn>,
}

impl<T: Real> Precision<T> {
    /// Factor `p`; on failure retry once with a `1e-8` relative ridge.
    pub fn factor(p: &DMatrix<T>, block: &'static str) -> Result<Self> {
        if let Some(chol) = Cholesky::new(p.clone()) {
            return Ok(Precision { chol });
        }
        let n = p.nrows();
        let scale = (0..n).map(|i| p[(i, i)].abs()).fold(T::one(), |a, b| a.max(b));
        let jittered = p + DMatrix::identity(n, n) * (T::lit(1e-8) * scale);
        Cholesky::new(jittered)
            .map(|chol| Precision { chol })
            .ok_or(Error::NotPositiveDefinite(block))
    }

    pub fn mean(&self, rhs: &DVector<T>) -> DVector<T> {
        self.chol.solve(rhs)
    }

    pub fn covariance(&self) -> DMatrix<T> {
        self.chol.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rhs: &DVector<T>, rng: &mut R) -> DVector<T> {
        let mean = self.chol.solve(rhs);
        let eps = DVector::from_fn(rhs.len(), |_, _| T::std_normal(rng));
        // Lᵀ x = eps  =>  x ~ N(0, (L Lᵀ)⁻¹)
        let x = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&eps)
            .expect("cholesky factor has a positive diagonal");
        mean + x
    }
}

/// Thin QR `M = Q R` with a positive diagonal in `R`. Fails with the index
/// of the first column whose diagonal is negligible.
pub fn thin_qr_positive<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let scale = m.column_iter().map(|c| c.norm()).fold(T::zero(), |a, b| a.max(b));
    for j in 0..r.nrows().min(r.ncols()) {
        let d = r[(j, j)];
        if !(d.abs() > T::lit(1e-12) * scale) || !d.is_finite() {
            return Err(Error::RankDeficient { factor: j });
        }
        if d < T::zero() {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    if r.nrows() < m.ncols() {
        return Err(Error::RankDeficient { factor: r.nrows() });
    }
    Ok((q, r))
}

/// Singular value decomposition with singular values in decreasing order.
pub fn sorted_svd<T: Real>(m: &DMatrix<T>) -> (DMatrix<T>, DVector<T>, DMatrix<T>) {
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let u = DMatrix::from_columns(&order.iter().map(|&j| u.column(j).into_owned()).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&j| vt.row(j).transpose()).collect::<Vec<_>>());
    let s = DVector::from_iterator(s.len(), order.iter().map(|&j| s[j]));
    (u, s, v)
}

/// Moore–Penrose pseudo-inverse; also reports whether `m` was rank deficient.
pub fn pseudo_inverse<T: Real>(m: &DMatrix<T>) -> (DMatrix<T>, bool) {
    let (u, s, v) = sorted_svd(m);
    let tol = T::lit(1e-10) * s.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let mut deficient = s.len() < m.ncols().min(m.nrows());
    let mut inv = DMatrix::zeros(m.ncols(), m.nrows());
    for j in 0..s.len() {
        if s[j] > tol {
            inv += v.column(j) * u.column(j).transpose() / s[j];
        } else {
            deficient = true;
        }
    }
    (inv, deficient)
}

/// Least-squares coefficients of `y ~ x` (minimal norm when rank deficient).
pub fn least_squares<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>) -> (DMatrix<T>, bool) {
    let (pinv, deficient) = pseudo_inverse(x);
    (pinv * y, deficient)
}

/// Quantile of already-sorted data with linear interpolation between order
/// statistics.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let w = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}
