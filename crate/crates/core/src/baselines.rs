//! Competing estimators: truncated SVD, smoothing splines with GCV, the
//! two-stage SVD-regression predictor and per-curve imputers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::AgeCountPanel;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, sorted_svd};
use crate::scalar::Real;
use crate::spline::SplineBasis;

/// Rank-`rank` reconstruction of a matrix after removing row means; the
/// row means are added back.
pub fn svd_reconstruct_matrix<T: Real>(l: &DMatrix<T>, rank: usize) -> Result<DMatrix<T>> {
    let (n, a) = l.shape();
    if rank > n.min(a) {
        return Err(Error::invalid(format!("rank {rank} exceeds min(N, A) = {}", n.min(a))));
    }
    let means = DVector::from_fn(n, |i, _| l.row(i).mean());
    let mut centered = l.clone();
    for i in 0..n {
        centered.row_mut(i).add_scalar_mut(-means[i]);
    }
    let mut fit = DMatrix::zeros(n, a);
    if rank > 0 {
        let (u, s, v) = sorted_svd(&centered);
        for j in 0..rank.min(s.len()) {
            fit += u.column(j) * v.column(j).transpose() * s[j];
        }
    }
    for i in 0..n {
        fit.row_mut(i).add_scalar_mut(means[i]);
    }
    Ok(fit)
}

/// Truncated-SVD fit of the `log(1 + y)` panel (missing cells enter as zero
/// counts), returned on the log scale.
pub fn svd_reconstruct<T: Real>(panel: &AgeCountPanel<T>, rank: usize) -> Result<DMatrix<T>> {
    svd_reconstruct_matrix(&panel.log1p(), rank)
}

/// Log-spaced smoothing-parameter grid for generalized cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GcvGrid {
    fn default() -> Self {
        GcvGrid {
            lo: 1e-4,
            hi: 1e6,
            points: 50,
        }
    }
}

impl GcvGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.lo];
        }
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..self.points)
            .map(|k| (a + (b - a) * k as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PsplineFit<T: Real> {
    pub fitted: DVector<T>,
    pub tau: f64,
    /// Effective degrees of freedom, the trace of the hat matrix.
    pub edf: T,
    pub gcv: T,
}

/// Weighted Gaussian P-spline fit at a fixed `tau` with second-difference
/// penalty. `tau = 0` gives the (minimal-norm) unpenalized least-squares fit.
pub fn pspline_fit<T: Real>(
    y: &DVector<T>,
    weights: &DVector<T>,
    basis: &SplineBasis<T>,
    tau: f64,
) -> Result<PsplineFit<T>> {
    let b = &basis.b;
    let wb = DMatrix::from_fn(b.nrows(), b.ncols(), |x, k| b[(x, k)] * weights[x]);
    let btwb = b.transpose() * &wb;
    let btwy = wb.transpose() * y;
    let n_obs = weights.iter().fold(T::zero(), |a, &w| a + w);
    let (coef, edf) = if tau == 0.0 {
        let sw = weights.map(|w| w.sqrt());
        let xs = DMatrix::from_fn(b.nrows(), b.ncols(), |x, k| b[(x, k)] * sw[x]);
        let ys = DMatrix::from_fn(b.nrows(), 1, |x, _| y[x] * sw[x]);
        let (c, _) = least_squares(&xs, &ys);
        let (pinv, _) = crate::linalg::pseudo_inverse(&xs);
        let edf = (&xs * pinv).trace();
        (c.column(0).into_owned(), edf)
    } else {
        let m = &btwb + basis.d.transpose() * &basis.d * T::lit(tau);
        let chol = crate::linalg::Precision::factor(&m, "penalized spline")?;
        let coef = chol.mean(&btwy);
        let edf = (chol.covariance() * &btwb).trace();
        (coef, edf)
    };
    let fitted = b * coef;
    let rss = (0..y.len()).fold(T::zero(), |acc, x| {
        let r = y[x] - fitted[x];
        acc + weights[x] * r * r
    });
    let denom = n_obs - edf;
    let gcv = n_obs * rss / (denom * denom);
    Ok(PsplineFit {
        fitted,
        tau,
        edf,
        gcv,
    })
}

/// P-spline fit with `tau` minimizing GCV over `grid`. Only cells with
/// positive weight count towards the criterion.
pub fn pspline_gcv_weighted<T: Real>(
    y: &DVector<T>,
    weights: &DVector<T>,
    basis: &SplineBasis<T>,
    grid: &GcvGrid,
) -> Result<PsplineFit<T>> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let mut best: Option<PsplineFit<T>> = None;
    for tau in grid.values() {
        let fit = pspline_fit(y, weights, basis, tau)?;
        if !fit.gcv.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| fit.gcv < b.gcv) {
            best = Some(fit);
        }
    }
    match best {
        Some(b) => Ok(b),
        // Every candidate left zero residual degrees of freedom: the data
        // are reproduced exactly, so take the smoothest fit.
        None => pspline_fit(y, weights, basis, grid.hi),
    }
}

/// Smooth one age series with a P-spline whose smoothing parameter
/// minimizes `A‖y − ŷ‖² / (A − tr H)²`.
pub fn pspline_smooth_gcv<T: Real>(series: &DVector<T>, basis: &SplineBasis<T>, grid: &GcvGrid) -> Result<PsplineFit<T>> {
    let weights = DVector::from_element(series.len(), T::one());
    pspline_gcv_weighted(series, &weights, basis, grid)
}

/// Smooth every row of an `N x A` matrix.
pub fn smooth_rows<T: Real>(l: &DMatrix<T>, ages: &[i64], grid: &GcvGrid) -> Result<DMatrix<T>> {
    let ages_f: Vec<f64> = ages.iter().map(|&a| a as f64).collect();
    let basis = SplineBasis::interpolating(&ages_f, 3)?;
    let mut out = l.clone();
    for i in 0..l.nrows() {
        let fit = pspline_smooth_gcv(&l.row(i).transpose(), &basis, grid)?;
        out.set_row(i, &fit.fitted.transpose());
    }
    Ok(out)
}

/// Two-stage predictor: SVD factors of the (optionally smoothed) log panel,
/// then least-squares regressions of intercepts and loadings on covariates.
#[derive(Debug, Clone)]
pub struct TwoStage<T: Real> {
    /// `A x rank`, orthonormal columns.
    pub phi: DMatrix<T>,
    /// `R` coefficients for the row means.
    pub delta: DVector<T>,
    /// `R x rank` coefficients for the loadings.
    pub beta: DMatrix<T>,
    pub rank_deficient: bool,
}

impl<T: Real> TwoStage<T> {
    pub fn fit(log_panel: &DMatrix<T>, w: &DMatrix<T>, rank: usize) -> Result<Self> {
        let (n, a) = log_panel.shape();
        if w.nrows() != n {
            return Err(Error::invalid("covariate rows do not match the panel"));
        }
        if rank > n.min(a) {
            return Err(Error::invalid(format!("rank {rank} exceeds min(N, A) = {}", n.min(a))));
        }
        let alpha = DVector::from_fn(n, |i, _| log_panel.row(i).mean());
        let mut centered = log_panel.clone();
        for i in 0..n {
            centered.row_mut(i).add_scalar_mut(-alpha[i]);
        }
        let (u, s, v) = sorted_svd(&centered);
        let phi = v.columns(0, rank).into_owned();
        let lambda = DMatrix::from_fn(n, rank, |i, q| u[(i, q)] * s[q]);
        let (delta, d1) = least_squares(w, &DMatrix::from_column_slice(n, 1, alpha.as_slice()));
        let (beta, d2) = least_squares(w, &lambda);
        let rank_deficient = d1 || d2;
        if rank_deficient {
            log::warn!("covariate cross-product is rank deficient; using the minimal-norm solution");
        }
        Ok(TwoStage {
            phi,
            delta: delta.column(0).into_owned(),
            beta,
            rank_deficient,
        })
    }

    /// Predicted log curve for a covariate row.
    pub fn predict(&self, w_new: &DVector<T>) -> DVector<T> {
        let lam = self.beta.transpose() * w_new;
        let mut curve = &self.phi * lam;
        curve.add_scalar_mut(w_new.dot(&self.delta));
        curve
    }
}

/// Predicted `log(1 + y)` curve for a new subpopulation from the training
/// panel's covariates `w_train` (rows aligned to the panel, intercept
/// included) and its covariate row `w_new`.
pub fn two_stage_predict<T: Real>(
    panel_train: &AgeCountPanel<T>,
    w_train: &DMatrix<T>,
    w_new: &DVector<T>,
    rank: usize,
    smooth_first: bool,
    grid: &GcvGrid,
) -> Result<DVector<T>> {
    let mut l = panel_train.log1p();
    if smooth_first {
        l = smooth_rows(&l, &panel_train.ages, grid)?;
    }
    Ok(TwoStage::fit(&l, w_train, rank)?.predict(w_new))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    Pspline,
}

/// Fill gaps in a series. Linear interpolation extends boundary gaps flat;
/// the P-spline variant fits the observed points (GCV-selected) and reads
/// the fit off at the gaps. Observed entries are returned unchanged.
pub fn interpolate_missing<T: Real>(
    series: &[Option<T>],
    ages: &[i64],
    method: Interpolation,
    grid: &GcvGrid,
) -> Result<Vec<T>> {
    let obs: Vec<usize> = (0..series.len()).filter(|&x| series[x].is_some()).collect();
    if obs.len() < 2 {
        return Err(Error::invalid("interpolation needs at least two observed points"));
    }
    if ages.len() != series.len() {
        return Err(Error::invalid("ages and series differ in length"));
    }
    let value = |x: usize| series[x].expect("observed index");
    match method {
        Interpolation::Linear => Ok((0..series.len())
            .map(|x| {
                if let Some(v) = series[x] {
                    return v;
                }
                let right = obs.partition_point(|&o| o < x);
                if right == 0 {
                    return value(obs[0]);
                }
                if right == obs.len() {
                    return value(obs[obs.len() - 1]);
                }
                let (l, r) = (obs[right - 1], obs[right]);
                let (xl, xr, xx) = (ages[l] as f64, ages[r] as f64, ages[x] as f64);
                let t = T::lit((xx - xl) / (xr - xl));
                value(l) + (value(r) - value(l)) * t
            })
            .collect()),
        Interpolation::Pspline => {
            let ages_f: Vec<f64> = ages.iter().map(|&a| a as f64).collect();
            let basis = SplineBasis::interpolating(&ages_f, 3)?;
            let y = DVector::from_fn(series.len(), |x, _| series[x].unwrap_or(T::zero()));
            let w = DVector::from_fn(series.len(), |x, _| if series[x].is_some() { T::one() } else { T::zero() });
            let fit = pspline_gcv_weighted(&y, &w, &basis, grid)?;
            Ok((0..series.len()).map(|x| series[x].unwrap_or(fit.fitted[x])).collect())
        }
    }
}
