//! B-spline bases and second-order difference penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SplineBasis<T: Real> {
    /// `A x K` basis values, column-centered when `centered` is set.
    pub b: DMatrix<T>,
    /// `(K-2) x K` second-difference operator.
    pub d: DMatrix<T>,
    /// Full open knot vector, boundary knots repeated `degree + 1` times.
    pub knots: Vec<T>,
    pub degree: usize,
    pub centered: bool,
    /// Column means removed from the raw basis (zeros when uncentered).
    pub col_means: DVector<T>,
}

impl<T: Real> SplineBasis<T> {
    pub fn k(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> usize {
        self.b.nrows()
    }

    /// Basis with `config`'s knot layout resolved against `ages`.
    pub fn from_config(ages: &[i64], config: &ModelConfig) -> Result<Self> {
        let (interior, boundary) = config.knots.resolve(ages)?;
        let ages_f: Vec<f64> = ages.iter().map(|&a| a as f64).collect();
        build_basis(&ages_f, config.spline_degree, &interior, boundary, config.centered)
    }

    /// Uncentered basis with an interior knot at every interior age, as used
    /// by per-curve smoothing splines.
    pub fn interpolating(ages: &[f64], degree: usize) -> Result<Self> {
        if ages.len() < 2 {
            return Err(Error::invalid("need at least two ages"));
        }
        let interior = &ages[1..ages.len() - 1];
        build_basis(ages, degree, interior, (ages[0], ages[ages.len() - 1]), false)
    }

    /// Evaluate the uncentered basis at an arbitrary point.
    pub fn eval_raw(&self, x: T) -> DVector<T> {
        eval_row(&self.knots, self.degree, x)
    }
}

/// Open knot vector: each boundary knot repeated `degree + 1` times.
pub fn open_knot_vector<T: Real>(interior: &[f64], boundary: (f64, f64), degree: usize) -> Vec<T> {
    let mut v = Vec::with_capacity(interior.len() + 2 * (degree + 1));
    v.extend(std::iter::repeat_n(T::lit(boundary.0), degree + 1));
    v.extend(interior.iter().map(|&k| T::lit(k)));
    v.extend(std::iter::repeat_n(T::lit(boundary.1), degree + 1));
    v
}

/// Cox–de Boor evaluation of all `K` basis functions at `x`.
fn eval_row<T: Real>(knots: &[T], degree: usize, x: T) -> DVector<T> {
    let k = knots.len() - degree - 1;
    let m = knots.len() - 1;
    let mut n = vec![T::zero(); m];
    let last = knots[m];
    for j in 0..m {
        let (lo, hi) = (knots[j], knots[j + 1]);
        if lo < hi && ((x >= lo && x < hi) || (x == last && hi == last)) {
            n[j] = T::one();
        }
    }
    for p in 1..=degree {
        for j in 0..(m - p) {
            let mut v = T::zero();
            let d1 = knots[j + p] - knots[j];
            if d1 > T::zero() {
                v += (x - knots[j]) / d1 * n[j];
            }
            let d2 = knots[j + p + 1] - knots[j + 1];
            if d2 > T::zero() {
                v += (knots[j + p + 1] - x) / d2 * n[j + 1];
            }
            n[j] = v;
        }
    }
    DVector::from_iterator(k, n.into_iter().take(k))
}

/// Evaluate a degree-`degree` B-spline basis at `ages`.
/// `K = interior.len() + degree + 1`.
pub fn build_basis<T: Real>(
    ages: &[f64],
    degree: usize,
    interior: &[f64],
    boundary: (f64, f64),
    centered: bool,
) -> Result<SplineBasis<T>> {
    let (lo, hi) = boundary;
    if !(lo < hi) {
        return Err(Error::invalid("boundary knots must be increasing"));
    }
    if interior.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("interior knots must be strictly increasing"));
    }
    if interior.iter().any(|&k| k <= lo || k >= hi) {
        return Err(Error::invalid("interior knots must lie strictly inside the boundary"));
    }
    if ages.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("ages must be sorted"));
    }
    if let Some(&x) = ages.iter().find(|&&x| x < lo || x > hi) {
        return Err(Error::invalid(format!(
            "age {x} lies outside the boundary knots [{lo}, {hi}]"
        )));
    }
    let k = interior.len() + degree + 1;
    if k < 3 {
        return Err(Error::invalid(format!("spline basis has K = {k} < 3 columns")));
    }
    let knots = open_knot_vector::<T>(interior, boundary, degree);
    let mut b = DMatrix::<T>::zeros(ages.len(), k);
    for (i, &x) in ages.iter().enumerate() {
        b.set_row(i, &eval_row(&knots, degree, T::lit(x)).transpose());
    }
    let col_means = if centered && !ages.is_empty() {
        let means = b.row_mean().transpose();
        for j in 0..k {
            let m = means[j];
            b.column_mut(j).add_scalar_mut(-m);
        }
        means
    } else {
        DVector::zeros(k)
    };
    Ok(SplineBasis {
        b,
        d: second_difference_matrix(k)?,
        knots,
        degree,
        centered,
        col_means,
    })
}

/// `(K-2) x K` matrix with rows `(1, -2, 1)` on a shifting diagonal.
pub fn second_difference_matrix<T: Real>(k: usize) -> Result<DMatrix<T>> {
    if k < 3 {
        return Err(Error::invalid(format!(
            "second differences need K >= 3, got {k}"
        )));
    }
    let mut d = DMatrix::zeros(k - 2, k);
    for i in 0..k - 2 {
        d[(i, i)] = T::one();
        d[(i, i + 1)] = T::lit(-2.0);
        d[(i, i + 2)] = T::one();
    }
    Ok(d)
}

/// `Dᵀ diag(kappa) D`.
pub fn penalty_matrix<T: Real>(d: &DMatrix<T>, kappa: &[T]) -> Result<DMatrix<T>> {
    if kappa.len() != d.nrows() {
        return Err(Error::invalid("kappa length must equal K - 2"));
    }
    if let Some(bad) = kappa.iter().find(|&&v| !(v > T::zero())) {
        return Err(Error::invalid(format!("penalty weight {bad} is not positive")));
    }
    let mut kd = d.clone();
    for (i, &w) in kappa.iter().enumerate() {
        kd.row_mut(i).scale_mut(w);
    }
    Ok(d.transpose() * kd)
}
