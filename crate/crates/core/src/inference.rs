//! Posterior summaries and derived quantities computed from stored draws.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::quantile_sorted;
use crate::sampler::{ModelState, PosteriorDraws};
use crate::scalar::Real;

/// Pointwise posterior mean and equal-tailed credible band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CurveSummary<T: Real> {
    pub mean: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
    pub level: f64,
}

impl<T: Real> CurveSummary<T> {
    /// Summarize a `draws x points` sample matrix column by column.
    pub fn from_samples(samples: &DMatrix<T>, level: f64) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::invalid("no draws to summarize"));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("credible level {level} not in (0, 1)")));
        }
        let p = samples.ncols();
        let (plo, phi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
        let mut mean = DVector::zeros(p);
        let mut lo = DVector::zeros(p);
        let mut hi = DVector::zeros(p);
        for j in 0..p {
            let mut col: Vec<T> = samples.column(j).iter().copied().collect();
            mean[j] = col.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(col.len());
            col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            lo[j] = quantile_sorted(&col, plo);
            hi[j] = quantile_sorted(&col, phi);
        }
        Ok(CurveSummary { mean, lo, hi, level })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Per-draw predictive count curves together with their summary.
#[derive(Debug, Clone)]
pub struct PredictiveCurves<T: Real> {
    /// `draws x A` counts.
    pub counts: DMatrix<u64>,
    pub summary: CurveSummary<T>,
}

impl<T: Real> PredictiveCurves<T> {
    /// Posterior predictive mean of `log(1 + ỹ)` per age.
    pub fn log1p_mean(&self) -> DVector<T> {
        let s = self.counts.nrows().max(1);
        DVector::from_fn(self.counts.ncols(), |x, _| {
            let sum: f64 = self.counts.column(x).iter().map(|&y| (y as f64).ln_1p()).sum();
            T::lit(sum / s as f64)
        })
    }
}

fn predictive_count<T: Real, R: Rng + ?Sized>(linear: T, sigma2: T, rng: &mut R) -> u64 {
    let z = T::normal(linear, sigma2, rng);
    T::poisson(z.exp(), rng)
}

/// Predictive draws from per-draw linear predictors (`draws x A`, offsets
/// included) and noise variances.
fn predictive_from_linear<T: Real, R: Rng + ?Sized>(
    linear: &DMatrix<T>,
    sigma2: &[T],
    level: f64,
    rng: &mut R,
) -> Result<PredictiveCurves<T>> {
    let counts = DMatrix::from_fn(linear.nrows(), linear.ncols(), |s, x| {
        predictive_count(linear[(s, x)], sigma2[s], rng)
    });
    let as_real = counts.map(|y| T::lit(y as f64));
    let summary = CurveSummary::from_samples(&as_real, level)?;
    Ok(PredictiveCurves { counts, summary })
}

fn require_draws<T: Real>(draws: &PosteriorDraws<T>) -> Result<()> {
    if draws.is_empty() {
        Err(Error::invalid("posterior draws are empty"))
    } else {
        Ok(())
    }
}

/// `α_i + Φ λ_i + O_i` for one stored state.
fn linear_predictor<T: Real>(s: &ModelState<T>, offsets: &DMatrix<T>, i: usize) -> DVector<T> {
    let mut v = &s.phi * s.lambda.row(i).transpose();
    v.add_scalar_mut(s.alpha[i]);
    v + offsets.row(i).transpose()
}

/// Posterior predictive counts for subpopulation `subpop`: fresh latent
/// noise and a Poisson draw per stored state.
pub fn posterior_predictive_y<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    subpop: &str,
    level: f64,
    rng: &mut R,
) -> Result<PredictiveCurves<T>> {
    require_draws(draws)?;
    let i = draws.subpop_index(subpop)?;
    predictive_for_index(draws, i, level, rng)
}

pub fn predictive_for_index<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    i: usize,
    level: f64,
    rng: &mut R,
) -> Result<PredictiveCurves<T>> {
    let offsets = &draws.meta.model.offsets;
    let a = draws.ages().len();
    let mut linear = DMatrix::zeros(draws.len(), a);
    for (s, st) in draws.states.iter().enumerate() {
        linear.set_row(s, &linear_predictor(st, offsets, i).transpose());
    }
    let sigma2: Vec<T> = draws.states.iter().map(|s| s.sigma2).collect();
    predictive_from_linear(&linear, &sigma2, level, rng)
}

/// Result of an age-composition contrast.
#[derive(Debug, Clone)]
pub struct CompositionDiff<T: Real> {
    pub summary: CurveSummary<T>,
    /// Draws dropped because a predictive curve summed to zero.
    pub skipped: usize,
}

/// Difference in predictive age composition `ỹ_j / Σ ỹ_j − ỹ_k / Σ ỹ_k`.
pub fn age_composition_diff<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    j: &str,
    k: &str,
    level: f64,
    rng: &mut R,
) -> Result<CompositionDiff<T>> {
    require_draws(draws)?;
    let (ij, ik) = (draws.subpop_index(j)?, draws.subpop_index(k)?);
    let yj = predictive_for_index(draws, ij, level, rng)?.counts;
    let yk = if ij == ik {
        yj.clone()
    } else {
        predictive_for_index(draws, ik, level, rng)?.counts
    };
    let mut rows: Vec<DVector<T>> = Vec::with_capacity(draws.len());
    for s in 0..draws.len() {
        let (tj, tk) = (yj.row(s).sum(), yk.row(s).sum());
        if tj == 0 || tk == 0 {
            continue;
        }
        let cj = yj.row(s).map(|y| T::lit(y as f64 / tj as f64));
        let ck = yk.row(s).map(|y| T::lit(y as f64 / tk as f64));
        rows.push((cj - ck).transpose());
    }
    let skipped = draws.len() - rows.len();
    if skipped * 100 > draws.len() {
        log::warn!("composition contrast skipped {skipped} of {} draws with zero totals", draws.len());
    }
    if rows.is_empty() {
        return Err(Error::invalid("every predictive draw had a zero total"));
    }
    let samples = DMatrix::from_fn(rows.len(), rows[0].len(), |s, x| rows[s][x]);
    Ok(CompositionDiff {
        summary: CurveSummary::from_samples(&samples, level)?,
        skipped,
    })
}

/// Scalar posterior summary of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub name: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `β` of one state mapped to the original covariate scale (`R x Q`).
fn beta_original<T: Real>(draws: &PosteriorDraws<T>, s: &ModelState<T>) -> DMatrix<T> {
    let std = &draws.meta.model.standardization;
    let mut out = s.beta.clone();
    for q in 0..s.beta.ncols() {
        let col: Vec<T> = s.beta.column(q).iter().copied().collect();
        let orig = std.coefficients_to_original(&col);
        out.set_column(q, &DVector::from_vec(orig));
    }
    out
}

/// Posterior summaries of `δ` on the original covariate scale.
pub fn level_effects<T: Real>(draws: &PosteriorDraws<T>, level: f64) -> Result<Vec<CoefSummary>> {
    require_draws(draws)?;
    let std = &draws.meta.model.standardization;
    let r = draws.meta.model.covariate_names.len();
    let mut samples = DMatrix::zeros(draws.len(), r);
    for (s, st) in draws.states.iter().enumerate() {
        let d: Vec<T> = st.delta.iter().copied().collect();
        let orig = std.coefficients_to_original(&d);
        for (j, v) in orig.into_iter().enumerate() {
            samples[(s, j)] = v;
        }
    }
    let summary = CurveSummary::from_samples(&samples, level)?;
    Ok(draws
        .meta
        .model
        .covariate_names
        .iter()
        .enumerate()
        .map(|(j, name)| CoefSummary {
            name: name.clone(),
            mean: summary.mean[j].to_f64(),
            lo: summary.lo[j].to_f64(),
            hi: summary.hi[j].to_f64(),
        })
        .collect())
}

fn covariate_column<T: Real>(draws: &PosteriorDraws<T>, covariate: &str) -> Result<usize> {
    draws
        .meta
        .model
        .covariate_names
        .iter()
        .position(|n| n == covariate)
        .ok_or_else(|| Error::invalid(format!("unknown covariate `{covariate}`")))
}

/// Per-draw shape effect curves `Σ_q Φ_q β_{q,j}` (`draws x A`).
pub fn shape_effect_samples<T: Real>(draws: &PosteriorDraws<T>, j: usize) -> Result<DMatrix<T>> {
    require_draws(draws)?;
    let r = draws.meta.model.covariate_names.len();
    if j >= r {
        return Err(Error::invalid(format!("covariate index {j} out of range (R = {r})")));
    }
    let a = draws.ages().len();
    let mut out = DMatrix::zeros(draws.len(), a);
    for (s, st) in draws.states.iter().enumerate() {
        let b = beta_original(draws, st);
        out.set_row(s, &(&st.phi * b.row(j).transpose()).transpose());
    }
    Ok(out)
}

/// Shape effect of one covariate on the age pattern.
pub fn shape_effect<T: Real>(draws: &PosteriorDraws<T>, covariate: &str, level: f64) -> Result<CurveSummary<T>> {
    let j = covariate_column(draws, covariate)?;
    CurveSummary::from_samples(&shape_effect_samples(draws, j)?, level)
}

/// Shape effect of a covariate with a quadratic companion, evaluated at
/// several covariate values.
#[derive(Debug, Clone)]
pub struct NonlinearEffect<T: Real> {
    pub values: Vec<T>,
    /// `A x V` posterior mean surface.
    pub surface: DMatrix<T>,
    pub slices: Vec<CurveSummary<T>>,
}

/// `Σ_q Φ_q (β_{q,j} + 2 w β_{q,n})` where `n` is the quadratic companion of
/// covariate `j`, on the original covariate scale.
pub fn nonlinear_effect<T: Real>(
    draws: &PosteriorDraws<T>,
    covariate: &str,
    values: &[T],
    level: f64,
) -> Result<NonlinearEffect<T>> {
    require_draws(draws)?;
    let j = covariate_column(draws, covariate)?;
    let (_, n) = *draws
        .meta
        .model
        .quad_pairs
        .iter()
        .find(|(lin, _)| *lin == j)
        .ok_or_else(|| Error::invalid(format!("covariate `{covariate}` has no quadratic companion")))?;
    let a = draws.ages().len();
    let per_draw: Vec<(DVector<T>, DVector<T>)> = draws
        .states
        .iter()
        .map(|st| {
            let b = beta_original(draws, st);
            (&st.phi * b.row(j).transpose(), &st.phi * b.row(n).transpose())
        })
        .collect();
    let mut surface = DMatrix::zeros(a, values.len());
    let mut slices = Vec::with_capacity(values.len());
    for (v, &w) in values.iter().enumerate() {
        let two_w = T::lit(2.0) * w;
        let samples = DMatrix::from_fn(draws.len(), a, |s, x| per_draw[s].0[x] + two_w * per_draw[s].1[x]);
        let summary = CurveSummary::from_samples(&samples, level)?;
        surface.set_column(v, &summary.mean);
        slices.push(summary);
    }
    Ok(NonlinearEffect {
        values: values.to_vec(),
        surface,
        slices,
    })
}

/// Baseline fit, counterfactual prediction and their per-draw difference.
#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    pub baseline: CurveSummary<T>,
    pub counterfactual: CurveSummary<T>,
    pub difference: CurveSummary<T>,
    /// Per-draw total predicted counts `(baseline, counterfactual)`.
    pub totals: Vec<(u64, u64)>,
}

/// Check that each quadratic companion in `w` is the square of its source.
pub fn check_quadratic_consistency<T: Real>(quad_pairs: &[(usize, usize)], w: &[T]) -> Result<()> {
    for &(lin, quad) in quad_pairs {
        let (l, q) = (w[lin], w[quad]);
        let expect = l * l;
        let tol = T::lit(1e-9) * (T::one() + expect.abs());
        if (q - expect).abs() > tol {
            return Err(Error::invalid(format!(
                "covariate column {quad} = {q} is not the square of column {lin} = {l}"
            )));
        }
    }
    Ok(())
}

/// Per-draw hierarchical-prior redraw of `(α̃, λ̃)` for a covariate vector
/// given on the original scale, returning the linear predictor without
/// offsets.
pub fn hierarchical_linear<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    w_original: &[T],
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let r = draws.meta.model.covariate_names.len();
    if w_original.len() != r {
        return Err(Error::invalid(format!(
            "covariate vector has length {}, expected {r}",
            w_original.len()
        )));
    }
    check_quadratic_consistency(&draws.meta.model.quad_pairs, w_original)?;
    let w = draws.meta.model.standardization.apply_row(w_original);
    let a = draws.ages().len();
    let mut out = DMatrix::zeros(draws.len(), a);
    for (s, st) in draws.states.iter().enumerate() {
        let alpha = T::normal(w.dot(&st.delta), st.sigma2_alpha, rng);
        let lam = DVector::from_fn(st.q(), |q, _| {
            T::normal(w.dot(&st.beta.column(q)), st.sigma2_lambda[q], rng)
        });
        let mut row = &st.phi * lam;
        row.add_scalar_mut(alpha);
        out.set_row(s, &row.transpose());
    }
    Ok(out)
}

/// Posterior mean of the hierarchical mean curve `wᵀδ + Σ_q Φ_q wᵀβ_q` for
/// a covariate vector on the original scale.
pub fn hierarchical_mean_curve<T: Real>(draws: &PosteriorDraws<T>, w_original: &[T]) -> Result<DVector<T>> {
    require_draws(draws)?;
    let w = draws.meta.model.standardization.apply_row(w_original);
    let a = draws.ages().len();
    let mut acc = DVector::zeros(a);
    for st in &draws.states {
        let lam = st.beta.transpose() * &w;
        let mut row = &st.phi * lam;
        row.add_scalar_mut(w.dot(&st.delta));
        acc += row;
    }
    Ok(acc / T::from_count(draws.len()))
}

/// Predictive counts for a new subpopulation with covariates `w_original`
/// (original scale, intercept first) and log-offsets `offsets`.
pub fn predictive_new<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    w_original: &[T],
    offsets: Option<&DVector<T>>,
    level: f64,
    rng: &mut R,
) -> Result<PredictiveCurves<T>> {
    require_draws(draws)?;
    let mut linear = hierarchical_linear(draws, w_original, rng)?;
    if let Some(o) = offsets {
        for mut row in linear.row_iter_mut() {
            row += o.transpose();
        }
    }
    let sigma2: Vec<T> = draws.states.iter().map(|s| s.sigma2).collect();
    predictive_from_linear(&linear, &sigma2, level, rng)
}

/// Counterfactual projection for subpopulation `subpop` under covariates
/// `w_counterfactual`. The baseline keeps the stored `α_i, λ_i`; the
/// counterfactual redraws both from the hierarchical prior.
pub fn scenario_project<T: Real, R: Rng + ?Sized>(
    draws: &PosteriorDraws<T>,
    subpop: &str,
    w_counterfactual: &[T],
    level: f64,
    rng: &mut R,
) -> Result<Scenario<T>> {
    require_draws(draws)?;
    let i = draws.subpop_index(subpop)?;
    let base = predictive_for_index(draws, i, level, rng)?;
    let offsets = draws.meta.model.offsets.row(i).transpose();
    let cf = predictive_new(draws, w_counterfactual, Some(&offsets), level, rng)?;
    let diff = DMatrix::from_fn(draws.len(), draws.ages().len(), |s, x| {
        T::lit(cf.counts[(s, x)] as f64 - base.counts[(s, x)] as f64)
    });
    let totals = (0..draws.len())
        .map(|s| (base.counts.row(s).sum(), cf.counts.row(s).sum()))
        .collect();
    Ok(Scenario {
        baseline: base.summary,
        counterfactual: cf.summary,
        difference: CurveSummary::from_samples(&diff, level)?,
        totals,
    })
}

/// One row of the tidy output tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub quantity: String,
    pub key: String,
    pub age_or_value: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Tidy rows for a curve indexed by `xs`.
pub fn curve_rows<T: Real>(quantity: &str, key: &str, xs: &[f64], c: &CurveSummary<T>) -> Vec<TidyRow> {
    xs.iter()
        .enumerate()
        .map(|(x, &age)| TidyRow {
            quantity: quantity.to_string(),
            key: key.to_string(),
            age_or_value: age,
            mean: c.mean[x].to_f64(),
            lo: c.lo[x].to_f64(),
            hi: c.hi[x].to_f64(),
        })
        .collect()
}

pub fn write_tidy_csv(path: &Path, rows: &[TidyRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["quantity", "subpop_or_covariate", "age_or_value", "mean", "lo", "hi"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.quantity.clone(),
            r.key.clone(),
            r.age_or_value.to_string(),
            r.mean.to_string(),
            r.lo.to_string(),
            r.hi.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
