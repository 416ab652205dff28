//! Reference computations written independently of the sampler code: the
//! full conditionals are rebuilt here from the model definition, the latent
//! target is integrated by quadrature, and the joint prior is simulated
//! directly. Shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use demofactor::config::{Hyper, Identification, Knots, ModelConfig};
use demofactor::data::{AgeCountPanel, CovariateMatrix};
use demofactor::sampler::{updates, update_latent_z, Chain, Horseshoe, ModelData, ModelState};
use demofactor::Real;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Relative tolerance on conditional moments.
pub const MOMENT_TOL: f64 = 0.01;
/// Draws per conditional block. At 10⁵ draws a 1% tolerance on the variance
/// of a low-shape gamma block is barely two Monte-Carlo standard errors; ten
/// times as many puts it beyond four.
pub const ORACLE_DRAWS: usize = 1_000_000;

// ---------------------------------------------------------------------------
// Moment comparisons

/// Compare Gaussian draws with a target given by its mean and precision.
///
/// Each draw is whitened as `e = Lᵀ(x - μ)` with `P = L Lᵀ`, so that under
/// the target `e ~ N(0, I)`. Reported: the mean error in posterior standard
/// deviations, `sqrt((x̄-μ)ᵀ P (x̄-μ) / d)`; the variance ratio
/// `mean ‖e‖² / d`; and the largest off-diagonal entry of the whitened
/// second-moment matrix.
pub struct GaussianMoments {
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    sq: f64,
    count: usize,
}

impl GaussianMoments {
    pub fn new(d: usize) -> Self {
        GaussianMoments {
            sum: DVector::zeros(d),
            outer: DMatrix::zeros(d, d),
            sq: 0.0,
            count: 0,
        }
    }

    pub fn push_whitened(&mut self, e: &DVector<f64>) {
        self.sum += e;
        self.outer.ger(1.0, e, e, 1.0);
        self.sq += e.norm_squared();
        self.count += 1;
    }

    pub fn push(&mut self, x: &DVector<f64>, mean: &DVector<f64>, chol_lower: &DMatrix<f64>) {
        let e = chol_lower.transpose() * (x - mean);
        self.push_whitened(&e);
    }

    pub fn check(&self, name: &str) -> Check {
        let d = self.sum.len() as f64;
        let m = self.count as f64;
        let mean_err = (self.sum.norm_squared() / (m * m) / d).sqrt();
        let var_ratio = self.sq / m / d;
        let c = &self.outer / m;
        let mut off = 0.0f64;
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                if i != j {
                    off = off.max(c[(i, j)].abs());
                }
            }
        }
        let pass = mean_err < MOMENT_TOL && (var_ratio - 1.0).abs() < MOMENT_TOL && off < 2.0 * MOMENT_TOL;
        Check {
            name: name.to_string(),
            pass,
            detail: format!(
                "mean error {mean_err:.4} sd, variance ratio {var_ratio:.4}, max cross-moment {off:.4} (d = {}, {} draws)",
                self.sum.len(),
                self.count
            ),
        }
    }
}

/// Pooled draws standardized to `Gamma(shape, 1)` by multiplying with their
/// rate; mean and variance must both equal `shape`.
pub struct GammaMoments {
    shape: f64,
    sum: f64,
    sumsq: f64,
    count: usize,
}

impl GammaMoments {
    pub fn new(shape: f64) -> Self {
        GammaMoments {
            shape,
            sum: 0.0,
            sumsq: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, x: f64, rate: f64) {
        let y = x * rate;
        self.sum += y;
        self.sumsq += y * y;
        self.count += 1;
    }

    pub fn check(&self, name: &str) -> Check {
        let m = self.count as f64;
        let mean = self.sum / m;
        let var = self.sumsq / m - mean * mean;
        let mr = mean / self.shape;
        let vr = var / self.shape;
        Check {
            name: name.to_string(),
            pass: (mr - 1.0).abs() < MOMENT_TOL && (vr - 1.0).abs() < MOMENT_TOL,
            detail: format!(
                "mean ratio {mr:.4}, variance ratio {vr:.4} (shape {:.3}, {} draws)",
                self.shape, self.count
            ),
        }
    }
}

pub fn lower_cholesky(p: &DMatrix<f64>) -> DMatrix<f64> {
    p.clone().cholesky().expect("oracle precision is positive definite").l()
}

pub fn dense_mean(p: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    p.clone().cholesky().expect("oracle precision is positive definite").solve(rhs)
}

// ---------------------------------------------------------------------------
// Frozen-state fixture

pub struct Fixture {
    pub data: ModelData<f64>,
    pub state: ModelState<f64>,
    pub hyper: Hyper,
    pub missing: Vec<(usize, usize)>,
}

/// Distinct constants so that any mix-up between shapes and rates shows.
pub fn fixture_hyper(f0_precision: f64) -> Hyper {
    Hyper {
        c0: 1.1,
        big_c0: 0.3,
        d0: 1.7,
        big_d0: 0.9,
        s0: 2.3,
        big_s0: 0.4,
        l0: 1.3,
        big_l0: 0.6,
        f0_precision,
    }
}

/// Eight subpopulations over twelve ages, two factors, eight spline
/// columns, three covariates, two missing cells and nonzero offsets; the
/// conditioning values come from a short run of the sampler itself.
pub fn fixture(f0_precision: f64, seed: u64) -> Fixture {
    let (n, a) = (8, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = DMatrix::from_fn(n, a, |i, x| {
        let eta = 2.0 + 0.8 * (x as f64 / 3.0).sin() + 0.4 * i as f64 / n as f64 + 0.3 * f64::std_normal(&mut rng);
        f64::poisson(eta.exp(), &mut rng)
    });
    let ages: Vec<i64> = (20..20 + a as i64).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut panel = AgeCountPanel::<f64>::new(counts, ages, ids).unwrap();
    let missing = vec![(1, 4), (6, 9)];
    for &(i, x) in &missing {
        panel.observed[(i, x)] = false;
    }
    panel.offsets = DMatrix::from_fn(n, a, |i, x| 0.05 * x as f64 - 0.1 * i as f64);
    let raw = DMatrix::from_fn(n, 2, |_, _| f64::std_normal(&mut rng));
    let cov = CovariateMatrix::from_columns(raw, vec!["u".into(), "v".into()], &[]).unwrap();
    let config = ModelConfig {
        q: 2,
        knots: Knots::Equal { count: 4 },
        hyper: fixture_hyper(f0_precision),
        ..ModelConfig::desk_scale(2, seed)
    };
    let data = ModelData::new(&panel, &cov, &config).unwrap();
    let mut chain = Chain::new(&data, &config).unwrap();
    for _ in 0..300 {
        chain.sweep(&data, true).unwrap();
    }
    let mut state = chain.state;
    state.hs_beta.nu.iter_mut().for_each(|v| *v = 0.5 + f64::open01(&mut rng));
    state.hs_delta.zeta[0] = 0.7;
    Fixture {
        data,
        state,
        hyper: config.hyper,
        missing,
    }
}

/// Second differences built from their definition.
pub fn oracle_d(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k - 2, k, |r, c| {
        if c == r || c == r + 2 {
            1.0
        } else if c == r + 1 {
            -2.0
        } else {
            0.0
        }
    })
}

/// `z - α - O - Σ_{q' ≠ skip} λ_{·q'} Φ_{q'}`, cell by cell.
fn residual(data: &ModelData<f64>, s: &ModelState<f64>, skip: Option<usize>) -> DMatrix<f64> {
    let phi = &data.basis.b * &s.f;
    DMatrix::from_fn(data.n(), data.a(), |i, x| {
        let mut r = s.z[(i, x)] - s.alpha[i] - data.offsets[(i, x)];
        for q in 0..s.f.ncols() {
            if Some(q) != skip {
                r -= s.lambda[(i, q)] * phi[(x, q)];
            }
        }
        r
    })
}

/// Spline-coefficient conditional for factor `q` from the stacked
/// regression of working outcomes on `λ_{iq} B`.
pub fn oracle_spline(data: &ModelData<f64>, s: &ModelState<f64>, h: &Hyper, q: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (n, a, k) = (data.n(), data.a(), data.basis.k());
    let b = &data.basis.b;
    let mut x = DMatrix::zeros(n * a, k);
    let mut y = DVector::zeros(n * a);
    let r = residual(data, s, Some(q));
    for i in 0..n {
        for t in 0..a {
            for c in 0..k {
                x[(i * a + t, c)] = s.lambda[(i, q)] * b[(t, c)];
            }
            y[i * a + t] = r[(i, t)];
        }
    }
    let d = oracle_d(k);
    let mut p = x.transpose() * &x / s.sigma2;
    for row in 0..k - 2 {
        let dr = d.row(row).transpose();
        p.ger(s.kappa[(row, q)] / s.tau[q], &dr, &dr, 1.0);
    }
    p[(0, 0)] += h.f0_precision;
    p[(1, 1)] += h.f0_precision;
    let rhs = x.transpose() * y / s.sigma2;
    (p, rhs)
}

/// Orthonormal basis of the complement of the constant vector.
pub fn constant_complement(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::identity(k, k);
    m.set_column(0, &DVector::from_element(k, 1.0));
    let qr = m.qr();
    qr.q().columns(1, k - 1).into_owned()
}

pub fn oracle_loadings(data: &ModelData<f64>, s: &ModelState<f64>) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let phi = &data.basis.b * &s.f;
    let q = s.f.ncols();
    let mut p = phi.transpose() * &phi / s.sigma2;
    for j in 0..q {
        p[(j, j)] += 1.0 / s.sigma2_lambda[j];
    }
    let mut rhs = Vec::new();
    for i in 0..data.n() {
        let zi = DVector::from_fn(data.a(), |x, _| s.z[(i, x)] - s.alpha[i] - data.offsets[(i, x)]);
        let mut r = phi.transpose() * zi / s.sigma2;
        for j in 0..q {
            let prior_mean: f64 = (0..data.r()).map(|c| data.w[(i, c)] * s.beta[(c, j)]).sum();
            r[j] += prior_mean / s.sigma2_lambda[j];
        }
        rhs.push(r);
    }
    (p, rhs)
}

pub fn oracle_beta(data: &ModelData<f64>, s: &ModelState<f64>, q: usize, collapsed: bool) -> (DMatrix<f64>, DVector<f64>) {
    let r = data.r();
    let w = &data.w;
    let phi = &data.basis.b * &s.f;
    let (v, target) = if collapsed {
        let zstar = DVector::from_fn(data.n(), |i, _| {
            (0..data.a())
                .map(|x| phi[(x, q)] * (s.z[(i, x)] - s.alpha[i] - data.offsets[(i, x)]))
                .sum::<f64>()
        });
        (s.sigma2 + s.sigma2_lambda[q], zstar)
    } else {
        (s.sigma2_lambda[q], s.lambda.column(q).into_owned())
    };
    let mut p = w.transpose() * w / v;
    for c in 0..r {
        p[(c, c)] += 1.0 / (s.hs_beta.xi[q] * s.hs_beta.rho[(c, q)]);
    }
    (p, w.transpose() * target / v)
}

pub fn oracle_delta(data: &ModelData<f64>, s: &ModelState<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let w = &data.w;
    let mut p = w.transpose() * w / s.sigma2_alpha;
    for c in 0..data.r() {
        p[(c, c)] += 1.0 / (s.hs_delta.xi[0] * s.hs_delta.rho[(c, 0)]);
    }
    (p, w.transpose() * &s.alpha / s.sigma2_alpha)
}

fn gaussian_check<F>(name: &str, p: &DMatrix<f64>, rhs: &DVector<f64>, mut draw: F) -> Check
where
    F: FnMut() -> DVector<f64>,
{
    let mean = dense_mean(p, rhs);
    let l = lower_cholesky(p);
    let mut acc = GaussianMoments::new(mean.len());
    for _ in 0..ORACLE_DRAWS {
        acc.push(&draw(), &mean, &l);
    }
    acc.check(name)
}

/// Every Gibbs block at frozen conditioning values against its closed-form
/// moments. Inverse-gamma blocks are checked through their reciprocals.
pub fn conditional_checks(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let fx = fixture(0.0, seed);
    let (data, s0, h) = (&fx.data, &fx.state, &fx.hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let (n, a, k, q, r) = (data.n(), data.a(), data.basis.k(), s0.q(), data.r());

    // σ²
    {
        let resid = residual(data, s0, None);
        let shape = h.c0 + 0.5 * (n * a) as f64;
        let rate = h.big_c0 + 0.5 * resid.iter().map(|v| v * v).sum::<f64>();
        let mut s = s0.clone();
        let mut acc = GammaMoments::new(shape);
        for _ in 0..ORACLE_DRAWS {
            updates::update_sigma2(&mut s, data, h, &mut rng);
            acc.push(1.0 / s.sigma2, rate);
        }
        out.push(acc.check("sigma2 (precision)"));
    }

    // α
    {
        let var = 1.0 / (1.0 / s0.sigma2_alpha + a as f64 / s0.sigma2);
        let resid = {
            let phi = &data.basis.b * &s0.f;
            DMatrix::from_fn(n, a, |i, x| {
                s0.z[(i, x)] - data.offsets[(i, x)] - (0..q).map(|j| s0.lambda[(i, j)] * phi[(x, j)]).sum::<f64>()
            })
        };
        let mean = DVector::from_fn(n, |i, _| {
            let prior: f64 = (0..r).map(|c| data.w[(i, c)] * s0.delta[c]).sum();
            var * (prior / s0.sigma2_alpha + resid.row(i).sum() / s0.sigma2)
        });
        let p = DMatrix::from_diagonal_element(n, n, 1.0 / var);
        let mut s = s0.clone();
        out.push(gaussian_check("alpha", &p, &(&p * &mean), || {
            updates::update_alpha(&mut s, data, &mut rng);
            s.alpha.clone()
        }));
    }

    // f_q under the flat start: a Gaussian on the complement of the
    // constant vector, with every draw summing to zero.
    for j in 0..q {
        let (p, rhs) = oracle_spline(data, s0, h, j);
        let u = constant_complement(k);
        let pu = u.transpose() * &p * &u;
        let ru = u.transpose() * &rhs;
        let mut s = s0.clone();
        let mut worst_sum = 0.0f64;
        let mut c = gaussian_check(&format!("spline coefficients f_{j} (flat start)"), &pu, &ru, || {
            updates::update_spline_coeffs(&mut s, data, h, j, &mut rng).unwrap();
            worst_sum = worst_sum.max(s.f.column(j).sum().abs());
            u.transpose() * s.f.column(j)
        });
        c.pass &= worst_sum < 1e-12;
        c.detail.push_str(&format!(", max |Σ f| {worst_sum:.1e}"));
        out.push(c);
    }

    // f_q with a proper prior on the first two coefficients.
    {
        let fx1 = fixture(2.5, seed ^ 1);
        let (d1, s1, h1) = (&fx1.data, &fx1.state, &fx1.hyper);
        for j in 0..q {
            let (p, rhs) = oracle_spline(d1, s1, h1, j);
            let mut s = s1.clone();
            out.push(gaussian_check(&format!("spline coefficients f_{j} (proper start)"), &p, &rhs, || {
                updates::update_spline_coeffs(&mut s, d1, h1, j, &mut rng).unwrap();
                s.f.column(j).into_owned()
            }));
        }
    }

    // λ, pooled over subpopulations.
    {
        let (p, rhs) = oracle_loadings(data, s0);
        let l = lower_cholesky(&p);
        let means: Vec<DVector<f64>> = rhs.iter().map(|b| dense_mean(&p, b)).collect();
        let mut acc = GaussianMoments::new(n * q);
        let mut s = s0.clone();
        let mut max_gamma_err = 0.0f64;
        for _ in 0..ORACLE_DRAWS {
            updates::update_loadings(&mut s, data, &mut rng).unwrap();
            let mut e = DVector::zeros(n * q);
            for i in 0..n {
                let x = s.lambda.row(i).transpose();
                e.rows_mut(i * q, q).copy_from(&(l.transpose() * (x - &means[i])));
            }
            acc.push_whitened(&e);
            let gap = (&s.lambda - &data.w * &s.beta - &s.gamma).amax();
            max_gamma_err = max_gamma_err.max(gap);
        }
        let mut c = acc.check("loadings lambda");
        c.pass &= max_gamma_err < 1e-12;
        c.detail.push_str(&format!(", max |λ - Wβ - γ| {max_gamma_err:.1e}"));
        out.push(c);
    }

    // τ and κ.
    {
        let d = oracle_d(k);
        let shape = h.d0 + 0.5 * (k - 2) as f64;
        let rates: Vec<f64> = (0..q)
            .map(|j| {
                let u = &d * s0.f.column(j);
                h.big_d0 + 0.5 * (0..k - 2).map(|m| s0.kappa[(m, j)] * u[m] * u[m]).sum::<f64>()
            })
            .collect();
        let mut acc = GammaMoments::new(shape);
        let mut s = s0.clone();
        for _ in 0..ORACLE_DRAWS {
            updates::update_tau(&mut s, data, h, &mut rng);
            for j in 0..q {
                acc.push(1.0 / s.tau[j], rates[j]);
            }
        }
        out.push(acc.check("smoothing variances tau (precision)"));

        let kappa_rates: Vec<Vec<f64>> = (0..q)
            .map(|j| {
                let u = &d * s0.f.column(j);
                u.iter().map(|u| 0.5 + u * u / (2.0 * s0.tau[j])).collect()
            })
            .collect();
        let mut acc = GammaMoments::new(1.0);
        let mut s = s0.clone();
        for _ in 0..ORACLE_DRAWS {
            updates::update_kappa(&mut s, data, &mut rng);
            for j in 0..q {
                for m in 0..k - 2 {
                    acc.push(s.kappa[(m, j)], kappa_rates[j][m]);
                }
            }
        }
        out.push(acc.check("local smoothing weights kappa"));
    }

    // β, collapsed over γ and given λ.
    for collapsed in [true, false] {
        let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = (0..q).map(|j| oracle_beta(data, s0, j, collapsed)).collect();
        let chols: Vec<DMatrix<f64>> = blocks.iter().map(|(p, _)| lower_cholesky(p)).collect();
        let means: Vec<DVector<f64>> = blocks.iter().map(|(p, b)| dense_mean(p, b)).collect();
        let mut acc = GaussianMoments::new(r * q);
        let mut s = s0.clone();
        for _ in 0..ORACLE_DRAWS {
            updates::update_beta(&mut s, data, collapsed, &mut rng).unwrap();
            let mut e = DVector::zeros(r * q);
            for j in 0..q {
                let x = s.beta.column(j).into_owned();
                e.rows_mut(j * r, r).copy_from(&(chols[j].transpose() * (x - &means[j])));
            }
            acc.push_whitened(&e);
        }
        let name = if collapsed { "beta (loadings integrated out)" } else { "beta (given loadings)" };
        out.push(acc.check(name));
    }

    // δ
    {
        let (p, rhs) = oracle_delta(data, s0);
        let mut s = s0.clone();
        out.push(gaussian_check("delta", &p, &rhs, || {
            updates::update_delta(&mut s, data, &mut rng).unwrap();
            s.delta.clone()
        }));
    }

    // σ²_α and σ²_λ
    {
        let shape_a = h.s0 + 0.5 * n as f64;
        let ra = &s0.alpha - &data.w * &s0.delta;
        let rate_a = h.big_s0 + 0.5 * ra.norm_squared();
        let shape_l = h.l0 + 0.5 * n as f64;
        let rate_l: Vec<f64> = (0..q)
            .map(|j| {
                let rl = s0.lambda.column(j) - &data.w * s0.beta.column(j);
                h.big_l0 + 0.5 * rl.norm_squared()
            })
            .collect();
        let mut acc_a = GammaMoments::new(shape_a);
        let mut acc_l = GammaMoments::new(shape_l);
        let mut s = s0.clone();
        for _ in 0..ORACLE_DRAWS {
            updates::update_hier_variances(&mut s, data, h, &mut rng);
            acc_a.push(1.0 / s.sigma2_alpha, rate_a);
            for j in 0..q {
                acc_l.push(1.0 / s.sigma2_lambda[j], rate_l[j]);
            }
        }
        out.push(acc_a.check("sigma2_alpha (precision)"));
        out.push(acc_l.check("sigma2_lambda (precision)"));
    }

    out.extend(horseshoe_checks(s0, &mut rng));

    // Latent values of missing cells: exactly the Gaussian prior term.
    {
        let phi = &data.basis.b * &s0.f;
        let means: Vec<f64> = fx
            .missing
            .iter()
            .map(|&(i, x)| s0.alpha[i] + data.offsets[(i, x)] + (0..q).map(|j| s0.lambda[(i, j)] * phi[(x, j)]).sum::<f64>())
            .collect();
        let sd = s0.sigma2.sqrt();
        let mut acc = GaussianMoments::new(fx.missing.len());
        let mut s = s0.clone();
        let mut mh = demofactor::sampler::AdaptiveMHState::new(n, a, &Default::default());
        for _ in 0..ORACLE_DRAWS {
            update_latent_z(&mut s, data, &mut mh, false, &mut rng);
            let e = DVector::from_fn(fx.missing.len(), |m, _| {
                let (i, x) = fx.missing[m];
                (s.z[(i, x)] - means[m]) / sd
            });
            acc.push_whitened(&e);
        }
        out.push(acc.check("latent values of missing cells"));
    }
    out
}

/// The four horseshoe sub-steps, each from a fresh copy of the frozen
/// auxiliaries. Coefficient blocks for `β` and `δ` are pooled.
pub fn horseshoe_checks(s0: &ModelState<f64>, rng: &mut ChaCha8Rng) -> Vec<Check> {
    let delta = DMatrix::from_column_slice(s0.delta.len(), 1, s0.delta.as_slice());
    let blocks: [(&Horseshoe<f64>, &DMatrix<f64>); 2] = [(&s0.hs_beta, &s0.beta), (&s0.hs_delta, &delta)];
    let r = s0.beta.nrows();
    let mut rho = GammaMoments::new(1.0);
    let mut xi = GammaMoments::new(0.5 * (1.0 + r as f64));
    let mut nu = GammaMoments::new(1.0);
    let mut zeta = GammaMoments::new(1.0);
    for &(hs0, coef) in &blocks {
        let c = coef.ncols();
        for _ in 0..ORACLE_DRAWS {
            let mut hs = hs0.clone();
            updates::update_hs_local(&mut hs, coef, rng);
            for j in 0..c {
                for m in 0..r {
                    let b = coef[(m, j)];
                    rho.push(1.0 / hs.rho[(m, j)], 1.0 / hs0.nu[(m, j)] + b * b / (2.0 * hs0.xi[j]));
                }
            }
            let mut hs = hs0.clone();
            updates::update_hs_global(&mut hs, coef, rng);
            for j in 0..c {
                let ss: f64 = (0..r).map(|m| coef[(m, j)] * coef[(m, j)] / hs0.rho[(m, j)]).sum();
                xi.push(1.0 / hs.xi[j], 1.0 / hs0.zeta[j] + 0.5 * ss);
            }
            let mut hs = hs0.clone();
            updates::update_hs_local_aux(&mut hs, rng);
            for j in 0..c {
                for m in 0..r {
                    nu.push(1.0 / hs.nu[(m, j)], 1.0 + 1.0 / hs0.rho[(m, j)]);
                }
            }
            let mut hs = hs0.clone();
            updates::update_hs_global_aux(&mut hs, rng);
            for j in 0..c {
                zeta.push(1.0 / hs.zeta[j], 1.0 + 1.0 / hs0.xi[j]);
            }
        }
    }
    vec![
        rho.check("horseshoe local scales rho (precision)"),
        xi.check("horseshoe global scales xi (precision)"),
        nu.check("horseshoe local mixing nu (precision)"),
        zeta.check("horseshoe global mixing zeta (precision)"),
    ]
}

// ---------------------------------------------------------------------------
// Single-cell latent target

/// `E[z | y]` for `p(z) ∝ exp(y z - e^z) N(z; m, s2)` by composite Simpson
/// integration over a window wide enough to hold all the mass.
pub fn latent_mean_quadrature(y: f64, m: f64, s2: f64) -> f64 {
    let centre = if y > 0.0 { 0.5 * (m + y.ln()) } else { m };
    let half = 12.0 * s2.sqrt() + (m - (y + 1.0).ln()).abs() + 5.0;
    let (lo, hi) = (centre - half, centre + half);
    let steps = 200_000usize;
    let h = (hi - lo) / steps as f64;
    let logp = |z: f64| y * z - z.exp() - (z - m) * (z - m) / (2.0 * s2);
    let peak = (0..=steps).map(|j| logp(lo + j as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..=steps {
        let z = lo + j as f64 * h;
        let w = if j == 0 || j == steps {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = (logp(z) - peak).exp() * w;
        num += z * p;
        den += p;
    }
    num / den
}

pub struct MhRun {
    pub mean: f64,
    pub acceptance: f64,
}

/// Run the latent update alone on a one-row panel whose cells all hold count
/// `y` and share the prior mean `m`; average over cells and sweeps.
pub fn mh_single_cell(y: u64, m: f64, s2: f64, burnin: usize, sweeps: usize, seed: u64) -> MhRun {
    let a = 10;
    let panel = AgeCountPanel::<f64>::new(DMatrix::from_element(1, a, y), (0..a as i64).collect(), vec!["c".into()]).unwrap();
    let cov = CovariateMatrix::intercept_only(1);
    let config = ModelConfig {
        q: 1,
        knots: Knots::Equal { count: 2 },
        ..ModelConfig::desk_scale(1, seed)
    };
    let data = ModelData::new(&panel, &cov, &config).unwrap();
    let mut s = ModelState::initialize(&data).unwrap();
    s.alpha[0] = m;
    s.lambda.fill(0.0);
    s.sigma2 = s2;
    let mut mh = demofactor::sampler::AdaptiveMHState::new(1, a, &config.z_update);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..burnin {
        update_latent_z(&mut s, &data, &mut mh, true, &mut rng);
    }
    let (acc0, prop0) = (mh.total_accept.sum(), mh.total_proposed.sum());
    let mut sum = 0.0;
    for _ in 0..sweeps {
        update_latent_z(&mut s, &data, &mut mh, false, &mut rng);
        sum += s.z.sum();
    }
    MhRun {
        mean: sum / (sweeps * a) as f64,
        acceptance: (mh.total_accept.sum() - acc0) as f64 / (mh.total_proposed.sum() - prop0) as f64,
    }
}

/// Cases `(y, prior mean, σ²)` for the latent-target check.
pub const MH_CASES: [(u64, f64, f64); 3] = [(0, -2.0, 0.1), (3, 0.5, 0.5), (50, 3.0, 0.3)];
pub const MH_TOL: f64 = 0.02;

pub fn mh_checks(seed: u64) -> Vec<Check> {
    MH_CASES
        .iter()
        .enumerate()
        .map(|(c, &(y, m, s2))| {
            let oracle = latent_mean_quadrature(y as f64, m, s2);
            let run = mh_single_cell(y, m, s2, 5_000, 40_000, seed + c as u64);
            let err = (run.mean - oracle).abs();
            Check {
                name: format!("latent MH target, y = {y}"),
                pass: err <= MH_TOL,
                detail: format!(
                    "chain mean {:.4}, quadrature {:.4}, |diff| {:.4} (tol {MH_TOL}), acceptance {:.3}",
                    run.mean, oracle, err, run.acceptance
                ),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Joint distribution test

/// Successive-conditional draws compared with as many prior draws.
pub const GEWEKE_DRAWS: usize = 20_000;
/// Sweeps (each followed by fresh data) between a prior start and the
/// recorded state.
pub const GEWEKE_STEPS: usize = 5;
pub const GEWEKE_BATCHES: usize = 50;
pub const GEWEKE_Z: f64 = 3.0;
/// The tiny model: six subpopulations, ten ages, one factor, five spline
/// columns, an intercept and one covariate. The design is scaled down so
/// that heavy-tailed coefficient draws rarely push counts to the generator's
/// limit, and every prior is proper.
pub struct GewekeModel {
    pub config: ModelConfig,
    pub data: ModelData<f64>,
}

pub fn geweke_model(mode: Identification, seed: u64) -> GewekeModel {
    let (n, a) = (6, 10);
    let x = [-1.3, -0.7, -0.1, 0.4, 0.8, 1.2];
    let w = DMatrix::from_fn(n, 2, |i, c| 0.05 * if c == 0 { 1.0 } else { x[i] });
    let cov = CovariateMatrix {
        values: w,
        names: vec!["intercept".into(), "x".into()],
        quad_pairs: vec![],
    };
    let panel = AgeCountPanel::<f64>::new(DMatrix::from_element(n, a, 1), (0..a as i64).collect(), (0..n).map(|i| format!("g{i}")).collect()).unwrap();
    let mut config = ModelConfig {
        q: 1,
        knots: Knots::Equal { count: 1 },
        identification: mode,
        hyper: Hyper {
            c0: 4.0,
            big_c0: 1.0,
            d0: 10.0,
            big_d0: 0.1,
            s0: 4.0,
            big_s0: 1.0,
            l0: 4.0,
            big_l0: 1.0,
            f0_precision: 1.0,
        },
        ..ModelConfig::desk_scale(1, seed)
    };
    config.covariates.standardize = false;
    let data = ModelData::new(&panel, &cov, &config).unwrap();
    assert_eq!(data.basis.k(), 5);
    GewekeModel { config, data }
}

fn ig(shape: f64, rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    1.0 / f64::gamma_draw(shape, rate, rng)
}

fn horseshoe_prior(r: usize, c: usize, rng: &mut ChaCha8Rng) -> (Horseshoe<f64>, DMatrix<f64>) {
    let mut hs = Horseshoe::ones(r, c);
    let mut coef = DMatrix::zeros(r, c);
    for j in 0..c {
        hs.zeta[j] = ig(0.5, 1.0, rng);
        hs.xi[j] = ig(0.5, 1.0 / hs.zeta[j], rng);
        for m in 0..r {
            hs.nu[(m, j)] = ig(0.5, 1.0, rng);
            hs.rho[(m, j)] = ig(0.5, 1.0 / hs.nu[(m, j)], rng);
            coef[(m, j)] = f64::normal(0.0, hs.xi[j] * hs.rho[(m, j)], rng);
        }
    }
    (hs, coef)
}

/// One independent draw of every parameter and the latent values from the
/// joint prior. Spline coefficients are built from their first two values
/// and the second differences, a map with unit Jacobian.
pub fn prior_draw(m: &GewekeModel, rng: &mut ChaCha8Rng) -> ModelState<f64> {
    let h = &m.config.hyper;
    let data = &m.data;
    let (n, a, k, r, q) = (data.n(), data.a(), data.basis.k(), data.r(), 1);
    let sigma2 = ig(h.c0, h.big_c0, rng);
    let sigma2_alpha = ig(h.s0, h.big_s0, rng);
    let sigma2_lambda = DVector::from_fn(q, |_, _| ig(h.l0, h.big_l0, rng));
    let tau = DVector::from_fn(q, |_, _| ig(h.d0, h.big_d0, rng));
    let kappa = DMatrix::from_fn(k - 2, q, |_, _| f64::gamma_draw(0.5, 0.5, rng));
    let mut f = DMatrix::zeros(k, q);
    for j in 0..q {
        f[(0, j)] = f64::normal(0.0, 1.0 / h.f0_precision, rng);
        f[(1, j)] = f64::normal(0.0, 1.0 / h.f0_precision, rng);
        for t in 0..k - 2 {
            let u = f64::normal(0.0, tau[j] / kappa[(t, j)], rng);
            f[(t + 2, j)] = u - f[(t, j)] + 2.0 * f[(t + 1, j)];
        }
    }
    let (hs_delta, delta) = horseshoe_prior(r, 1, rng);
    let delta = delta.column(0).into_owned();
    let (hs_beta, beta) = horseshoe_prior(r, q, rng);
    let w = &data.w;
    let alpha = DVector::from_fn(n, |i, _| f64::normal(w.row(i).transpose().dot(&delta), sigma2_alpha, rng));
    let gamma = DMatrix::from_fn(n, q, |_, j| f64::normal(0.0, sigma2_lambda[j], rng));
    let lambda = w * &beta + &gamma;
    let phi = &data.basis.b * &f;
    let z = DMatrix::from_fn(n, a, |i, x| {
        let mean = alpha[i] + data.offsets[(i, x)] + (0..q).map(|j| lambda[(i, j)] * phi[(x, j)]).sum::<f64>();
        f64::normal(mean, sigma2, rng)
    });
    ModelState {
        z,
        alpha,
        f,
        phi,
        lambda,
        gamma,
        beta,
        delta,
        sigma2,
        sigma2_alpha,
        sigma2_lambda,
        tau,
        kappa,
        hs_beta,
        hs_delta,
    }
}

/// Named scalar test functions: logs of positive parameters and `asinh` of
/// real ones (heavy-tailed coefficients have no finite mean otherwise).
/// The factor blocks `f`, `λ`, `β` are unidentified up to a common sign, so
/// they enter through `ln(1 + x²)` together with the sign-free factor
/// contribution `λ_i Φ(x)` at the first and last age.
pub fn geweke_scalars(s: &ModelState<f64>) -> Vec<(String, f64)> {
    let mut v = vec![
        ("log sigma2".to_string(), s.sigma2.ln()),
        ("log sigma2_alpha".to_string(), s.sigma2_alpha.ln()),
    ];
    for (j, x) in s.sigma2_lambda.iter().enumerate() {
        v.push((format!("log sigma2_lambda[{j}]"), x.ln()));
    }
    for (j, x) in s.tau.iter().enumerate() {
        v.push((format!("log tau[{j}]"), x.ln()));
    }
    for (j, x) in s.kappa.iter().enumerate() {
        v.push((format!("log kappa[{j}]"), x.ln()));
    }
    for (j, x) in s.alpha.iter().enumerate() {
        v.push((format!("asinh alpha[{j}]"), x.asinh()));
    }
    let sq = |x: &f64| (x * x).ln_1p();
    for (j, x) in s.lambda.iter().enumerate() {
        v.push((format!("log1p lambda[{j}]^2"), sq(x)));
    }
    for (j, x) in s.f.iter().enumerate() {
        v.push((format!("log1p f[{j}]^2"), sq(x)));
    }
    for (j, x) in s.beta.iter().enumerate() {
        v.push((format!("log1p beta[{j}]^2"), sq(x)));
    }
    let fit = s.factor_fit();
    let last = fit.ncols() - 1;
    for i in 0..fit.nrows() {
        v.push((format!("asinh fit[{i}, first age]"), fit[(i, 0)].asinh()));
        v.push((format!("asinh fit[{i}, last age]"), fit[(i, last)].asinh()));
    }
    for (j, x) in s.delta.iter().enumerate() {
        v.push((format!("asinh delta[{j}]"), x.asinh()));
    }
    for (tag, hs) in [("beta", &s.hs_beta), ("delta", &s.hs_delta)] {
        for (j, x) in hs.rho.iter().enumerate() {
            v.push((format!("log rho_{tag}[{j}]"), x.ln()));
        }
        for (j, x) in hs.nu.iter().enumerate() {
            v.push((format!("log nu_{tag}[{j}]"), x.ln()));
        }
        for (j, x) in hs.xi.iter().enumerate() {
            v.push((format!("log xi_{tag}[{j}]"), x.ln()));
        }
        for (j, x) in hs.zeta.iter().enumerate() {
            v.push((format!("log zeta_{tag}[{j}]"), x.ln()));
        }
    }
    v
}

pub struct GewekeStat {
    pub name: String,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
    pub seconds: f64,
}

impl GewekeReport {
    pub fn worst(&self) -> &GewekeStat {
        self.stats
            .iter()
            .max_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
            .expect("at least one statistic")
    }

    pub fn failures(&self) -> Vec<&GewekeStat> {
        self.stats.iter().filter(|s| !(s.z.abs() < GEWEKE_Z)).collect()
    }

    pub fn check(&self, name: &str) -> Check {
        let w = self.worst();
        let fails = self.failures();
        Check {
            name: name.to_string(),
            pass: fails.is_empty(),
            detail: format!(
                "{} of {} statistics beyond {GEWEKE_Z} pooled s.e.; worst {} at {:.2} (prior {:.3}, chain {:.3}); {:.1}s",
                fails.len(),
                self.stats.len(),
                w.name,
                w.z,
                w.prior_mean,
                w.chain_mean,
                self.seconds
            ),
        }
    }
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn compare(names: Vec<String>, prior: &[Vec<f64>], other: &[Vec<f64>], batches: Option<usize>) -> Vec<GewekeStat> {
    names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let p: Vec<f64> = prior.iter().map(|r| r[j]).collect();
            let c: Vec<f64> = other.iter().map(|r| r[j]).collect();
            let (pm, pv) = mean_and_var(&p);
            let (cm, cv) = mean_and_var(&c);
            let c_se2 = match batches {
                None => cv / c.len() as f64,
                Some(b) => {
                    let bm: Vec<f64> = c.chunks(c.len() / b).map(|x| x.iter().sum::<f64>() / x.len() as f64).collect();
                    mean_and_var(&bm).1 / bm.len() as f64
                }
            };
            let se = (pv / p.len() as f64 + c_se2).sqrt();
            GewekeStat {
                name,
                prior_mean: pm,
                chain_mean: cm,
                z: (cm - pm) / se,
            }
        })
        .collect()
}

fn values(s: &ModelState<f64>) -> Vec<f64> {
    geweke_scalars(s).into_iter().map(|(_, v)| v).collect()
}

/// Prior-only simulation against the successive-conditional simulator (a
/// sampler sweep given the data, then fresh data given the parameters).
///
/// Each successive-conditional draw is the end point of its own chain of
/// `steps` sweeps started from an exact prior draw, so the draws are
/// independent and their standard errors exact; if every update leaves the
/// joint distribution invariant, the end points are again prior draws.
pub fn geweke(mode: Identification, draws: usize, steps: usize, seed: u64) -> GewekeReport {
    let start = std::time::Instant::now();
    let mut model = geweke_model(mode, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let names: Vec<String> = geweke_scalars(&prior_draw(&model, &mut rng)).into_iter().map(|(n, _)| n).collect();
    let prior: Vec<Vec<f64>> = (0..draws).map(|_| values(&prior_draw(&model, &mut rng))).collect();
    let mut successive = Vec::with_capacity(draws);
    for rep in 0..draws {
        let s0 = prior_draw(&model, &mut rng);
        redraw_counts(&mut model.data, &s0, &mut rng);
        let mut config = model.config.clone();
        config.mcmc.seed = demofactor::evaluation::derive_seed(seed, rep as u64);
        let mut chain = Chain::from_state(s0, &model.data, &config);
        for _ in 0..steps {
            chain.sweep(&model.data, false).expect("sweep succeeds");
            redraw_counts(&mut model.data, &chain.state, &mut rng);
        }
        successive.push(values(&chain.state));
    }
    GewekeReport {
        stats: compare(names, &prior, &successive, None),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// The classical single-chain form: one successive-conditional chain of
/// `sweeps` sweeps from a prior start, with batch-means standard errors.
pub fn geweke_single_chain(mode: Identification, sweeps: usize, seed: u64) -> GewekeReport {
    let start = std::time::Instant::now();
    let mut model = geweke_model(mode, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let prior: Vec<Vec<f64>> = (0..sweeps).map(|_| values(&prior_draw(&model, &mut rng))).collect();
    let s0 = prior_draw(&model, &mut rng);
    let names: Vec<String> = geweke_scalars(&s0).into_iter().map(|(n, _)| n).collect();
    redraw_counts(&mut model.data, &s0, &mut rng);
    let mut chain = Chain::from_state(s0, &model.data, &model.config);
    let mut successive = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        chain.sweep(&model.data, false).expect("sweep succeeds");
        redraw_counts(&mut model.data, &chain.state, &mut rng);
        successive.push(values(&chain.state));
    }
    GewekeReport {
        stats: compare(names, &prior, &successive, Some(GEWEKE_BATCHES)),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn redraw_counts(data: &mut ModelData<f64>, s: &ModelState<f64>, rng: &mut ChaCha8Rng) {
    for (y, z) in data.counts.iter_mut().zip(s.z.iter()) {
        *y = f64::poisson(z.exp(), rng);
    }
}
