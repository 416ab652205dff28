//! Full conditional distributions and the draws from them.
//!
//! Each `*_conditional` function returns the parameters of a block's full
//! conditional at the current state; the matching `update_*` function draws
//! from it. Gamma and inverse-gamma laws are shape–rate throughout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::Hyper;
use crate::error::Result;
use crate::linalg::{GaussianInfo, Precision};
use crate::sampler::state::Horseshoe;
use crate::sampler::{ModelData, ModelState};
use crate::scalar::Real;
use crate::spline::penalty_matrix;

/// `(shape, rate)` of a gamma or inverse-gamma law.
pub type ShapeRate<T> = (T, T);

/// `z - α ⊕ - O`, i.e. latent values net of intercepts and offsets.
pub fn net_latent<T: Real>(state: &ModelState<T>, data: &ModelData<T>) -> DMatrix<T> {
    let mut r = &state.z - &data.offsets;
    for i in 0..r.nrows() {
        r.row_mut(i).add_scalar_mut(-state.alpha[i]);
    }
    r
}

pub fn sigma2_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>, h: &Hyper) -> ShapeRate<T> {
    let resid = &state.z - state.z_mean(data);
    let rss = resid.norm_squared();
    let cells = T::from_count(data.n() * data.a());
    (T::lit(h.c0) + T::lit(0.5) * cells, T::lit(h.big_c0) + T::lit(0.5) * rss)
}

pub fn update_sigma2<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    h: &Hyper,
    rng: &mut R,
) {
    let (shape, rate) = sigma2_conditional(state, data, h);
    state.sigma2 = T::inv_gamma(shape, rate, rng);
}

/// Per-subpopulation means and the common variance of `α_i`.
pub fn alpha_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>) -> (DVector<T>, T) {
    let a = T::from_count(data.a());
    let var = T::one() / (T::one() / state.sigma2_alpha + a / state.sigma2);
    let prior_mean = &data.w * &state.delta;
    let resid = &state.z - state.factor_fit() - &data.offsets;
    let mean = DVector::from_fn(data.n(), |i, _| {
        var * (prior_mean[i] / state.sigma2_alpha + resid.row(i).sum() / state.sigma2)
    });
    (mean, var)
}

pub fn update_alpha<T: Real, R: Rng + ?Sized>(state: &mut ModelState<T>, data: &ModelData<T>, rng: &mut R) {
    let (mean, var) = alpha_conditional(state, data);
    state.alpha = mean.map(|m| T::normal(m, var, rng));
}

/// Whether the spline coefficients of a factor carry no information along
/// the constant direction, so that it must be fixed by projection.
fn constant_direction_free<T: Real>(data: &ModelData<T>, h: &Hyper) -> bool {
    data.basis.centered && h.f0_precision == 0.0
}

/// Information-form conditional of `f_q`. Under a centered basis with a
/// flat start, the unidentified constant direction receives unit precision
/// here and is projected out after the draw.
pub fn spline_conditional<T: Real>(
    state: &ModelState<T>,
    data: &ModelData<T>,
    h: &Hyper,
    q: usize,
) -> Result<GaussianInfo<T>> {
    let k = data.basis.k();
    let kappa: Vec<T> = state.kappa.column(q).iter().copied().collect();
    let omega = penalty_matrix(&data.basis.d, &kappa)?;
    let mut precision = omega / state.tau[q];
    let lam = state.lambda.column(q);
    precision += &data.btb * (lam.norm_squared() / state.sigma2);
    if h.f0_precision > 0.0 {
        let p = T::lit(h.f0_precision);
        precision[(0, 0)] += p;
        precision[(1, 1)] += p;
    } else if constant_direction_free(data, h) {
        precision.add_scalar_mut(T::one() / T::from_count(k));
    }
    // Working outcomes exclude factor q.
    let mut resid = net_latent(state, data) - state.factor_fit();
    resid += state.lambda.column(q) * state.phi.column(q).transpose();
    let rhs = data.basis.b.transpose() * (resid.transpose() * lam) / state.sigma2;
    Ok(GaussianInfo::new(precision, rhs))
}

/// Draw `f_q` and refresh `Φ_q`. Identification is the caller's business.
pub fn update_spline_coeffs<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    h: &Hyper,
    q: usize,
    rng: &mut R,
) -> Result<()> {
    let info = spline_conditional(state, data, h, q)?;
    let mut f = info.sample(rng, "spline coefficients")?;
    if constant_direction_free(data, h) {
        let m = f.mean();
        f.add_scalar_mut(-m);
    }
    state.phi.set_column(q, &(&data.basis.b * &f));
    state.f.set_column(q, &f);
    Ok(())
}

/// Shared precision of every `λ_i` and the `N x Q` matrix of right-hand
/// sides. With orthonormal `Φ` this is the usual projected-observation
/// update; otherwise it is the general Gaussian regression of `z_i` on `Φ`.
pub fn loadings_conditional<T: Real>(
    state: &ModelState<T>,
    data: &ModelData<T>,
) -> (DMatrix<T>, DMatrix<T>) {
    let q = state.q();
    let prior_prec = state.sigma2_lambda.map(|v| T::one() / v);
    let precision = state.phi.transpose() * &state.phi / state.sigma2 + DMatrix::from_diagonal(&prior_prec);
    let zstar = net_latent(state, data) * &state.phi;
    let prior_mean = &data.w * &state.beta;
    let rhs = DMatrix::from_fn(data.n(), q, |i, j| {
        zstar[(i, j)] / state.sigma2 + prior_mean[(i, j)] * prior_prec[j]
    });
    (precision, rhs)
}

pub fn update_loadings<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    rng: &mut R,
) -> Result<()> {
    let (precision, rhs) = loadings_conditional(state, data);
    let chol = Precision::factor(&precision, "loadings")?;
    for i in 0..data.n() {
        let draw = chol.sample(&rhs.row(i).transpose(), rng);
        state.lambda.set_row(i, &draw.transpose());
    }
    state.gamma = &state.lambda - &data.w * &state.beta;
    Ok(())
}

pub fn tau_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>, h: &Hyper, q: usize) -> ShapeRate<T> {
    let u = &data.basis.d * state.f.column(q);
    let quad = u
        .iter()
        .zip(state.kappa.column(q).iter())
        .fold(T::zero(), |acc, (&u, &k)| acc + k * u * u);
    let k = data.basis.k();
    (
        T::lit(h.d0) + T::lit(0.5) * T::from_count(k - 2),
        T::lit(h.big_d0) + T::lit(0.5) * quad,
    )
}

pub fn update_tau<T: Real, R: Rng + ?Sized>(state: &mut ModelState<T>, data: &ModelData<T>, h: &Hyper, rng: &mut R) {
    for q in 0..state.q() {
        let (shape, rate) = tau_conditional(state, data, h, q);
        state.tau[q] = T::inv_gamma(shape, rate, rng);
    }
}

/// Gamma rates of `κ_{q,·}`; the shape is always one.
pub fn kappa_rates<T: Real>(state: &ModelState<T>, data: &ModelData<T>, q: usize) -> DVector<T> {
    let u = &data.basis.d * state.f.column(q);
    let two_tau = T::lit(2.0) * state.tau[q];
    u.map(|u| T::lit(0.5) + u * u / two_tau)
}

pub fn update_kappa<T: Real, R: Rng + ?Sized>(state: &mut ModelState<T>, data: &ModelData<T>, rng: &mut R) {
    for q in 0..state.q() {
        let rates = kappa_rates(state, data, q);
        for (k, &rate) in rates.iter().enumerate() {
            state.kappa[(k, q)] = T::gamma_draw(T::one(), rate, rng);
        }
    }
}

/// Conditional of `β_q` with `γ_{·,q}` integrated out: the projected
/// observations `z*_{i,q}` are treated as `N(w_iᵀβ_q, σ² + σ²_{λ,q})`.
/// Valid when `Φ` is orthonormal.
pub fn beta_collapsed_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>, q: usize) -> GaussianInfo<T> {
    let v = state.sigma2 + state.sigma2_lambda[q];
    let zstar = net_latent(state, data) * state.phi.column(q);
    let precision = &data.wtw / v + DMatrix::from_diagonal(&state.hs_beta.prior_precision(q));
    let rhs = data.w.transpose() * zstar / v;
    GaussianInfo::new(precision, rhs)
}

/// Conditional of `β_q` given the loadings.
pub fn beta_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>, q: usize) -> GaussianInfo<T> {
    let v = state.sigma2_lambda[q];
    let precision = &data.wtw / v + DMatrix::from_diagonal(&state.hs_beta.prior_precision(q));
    let rhs = data.w.transpose() * state.lambda.column(q) / v;
    GaussianInfo::new(precision, rhs)
}

pub fn update_beta<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    collapsed: bool,
    rng: &mut R,
) -> Result<()> {
    for q in 0..state.q() {
        let info = if collapsed {
            beta_collapsed_conditional(state, data, q)
        } else {
            beta_conditional(state, data, q)
        };
        let draw = info.sample(rng, "beta")?;
        state.beta.set_column(q, &draw);
    }
    state.gamma = &state.lambda - &data.w * &state.beta;
    Ok(())
}

pub fn delta_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>) -> GaussianInfo<T> {
    let v = state.sigma2_alpha;
    let precision = &data.wtw / v + DMatrix::from_diagonal(&state.hs_delta.prior_precision(0));
    let rhs = data.w.transpose() * &state.alpha / v;
    GaussianInfo::new(precision, rhs)
}

pub fn update_delta<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    rng: &mut R,
) -> Result<()> {
    state.delta = delta_conditional(state, data).sample(rng, "delta")?;
    Ok(())
}

pub fn sigma2_alpha_conditional<T: Real>(state: &ModelState<T>, data: &ModelData<T>, h: &Hyper) -> ShapeRate<T> {
    let resid = &state.alpha - &data.w * &state.delta;
    (
        T::lit(h.s0) + T::lit(0.5) * T::from_count(data.n()),
        T::lit(h.big_s0) + T::lit(0.5) * resid.norm_squared(),
    )
}

pub fn sigma2_lambda_conditional<T: Real>(
    state: &ModelState<T>,
    data: &ModelData<T>,
    h: &Hyper,
    q: usize,
) -> ShapeRate<T> {
    let resid = state.lambda.column(q) - &data.w * state.beta.column(q);
    (
        T::lit(h.l0) + T::lit(0.5) * T::from_count(data.n()),
        T::lit(h.big_l0) + T::lit(0.5) * resid.norm_squared(),
    )
}

pub fn update_hier_variances<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    h: &Hyper,
    rng: &mut R,
) {
    let (shape, rate) = sigma2_alpha_conditional(state, data, h);
    state.sigma2_alpha = T::inv_gamma(shape, rate, rng);
    for q in 0..state.q() {
        let (shape, rate) = sigma2_lambda_conditional(state, data, h, q);
        state.sigma2_lambda[q] = T::inv_gamma(shape, rate, rng);
    }
}

/// Local scales `ρ`: `IG(1, 1/ν + b²/(2ξ))`.
pub fn update_hs_local<T: Real, R: Rng + ?Sized>(hs: &mut Horseshoe<T>, coef: &DMatrix<T>, rng: &mut R) {
    let (r, c) = coef.shape();
    for j in 0..c {
        for k in 0..r {
            let b = coef[(k, j)];
            let rate = T::one() / hs.nu[(k, j)] + b * b / (T::lit(2.0) * hs.xi[j]);
            hs.rho[(k, j)] = T::inv_gamma(T::one(), rate, rng);
        }
    }
}

/// Global scales `ξ`: `IG((1 + R)/2, 1/ζ + Σ b²/(2ρ))`.
pub fn update_hs_global<T: Real, R: Rng + ?Sized>(hs: &mut Horseshoe<T>, coef: &DMatrix<T>, rng: &mut R) {
    let (r, c) = coef.shape();
    let half = T::lit(0.5);
    for j in 0..c {
        let ss = (0..r).fold(T::zero(), |acc, k| acc + coef[(k, j)] * coef[(k, j)] / hs.rho[(k, j)]);
        let shape = (T::one() + T::from_count(r)) * half;
        hs.xi[j] = T::inv_gamma(shape, T::one() / hs.zeta[j] + half * ss, rng);
    }
}

/// Local mixing variables `ν`: `IG(1, 1 + 1/ρ)`.
pub fn update_hs_local_aux<T: Real, R: Rng + ?Sized>(hs: &mut Horseshoe<T>, rng: &mut R) {
    let one = T::one();
    for v in 0..hs.nu.len() {
        hs.nu[v] = T::inv_gamma(one, one + one / hs.rho[v], rng);
    }
}

/// Global mixing variables `ζ`: `IG(1, 1 + 1/ξ)`.
pub fn update_hs_global_aux<T: Real, R: Rng + ?Sized>(hs: &mut Horseshoe<T>, rng: &mut R) {
    let one = T::one();
    for j in 0..hs.zeta.len() {
        hs.zeta[j] = T::inv_gamma(one, one + one / hs.xi[j], rng);
    }
}

/// One sweep over the horseshoe auxiliaries of the coefficient matrix
/// `coef` (`R x C`): local scales, global scales, then both mixing
/// variables.
pub fn update_horseshoe<T: Real, R: Rng + ?Sized>(hs: &mut Horseshoe<T>, coef: &DMatrix<T>, rng: &mut R) {
    update_hs_local(hs, coef, rng);
    update_hs_global(hs, coef, rng);
    update_hs_local_aux(hs, rng);
    update_hs_global_aux(hs, rng);
}
