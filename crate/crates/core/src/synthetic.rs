//! Simulated panels with known signal, following the factor model's
//! generative structure.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Knots;
use crate::data::{write_counts_csv, write_covariates_csv, AgeCountPanel, CovariateMatrix};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, sorted_svd, thin_qr_positive};
use crate::scalar::Real;
use crate::spline::build_basis;

/// Where the true age components come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentSource {
    /// Five fixed closed-form shapes (see [`synthetic_shapes`]).
    SyntheticShapes,
    /// Leading right singular vectors of a supplied panel's `log(1 + y)`.
    SourcePanel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub a: usize,
    pub noise_sigma2: f64,
    pub intercept: f64,
    pub n_covariates: usize,
    pub components: usize,
    /// Entries of `δ` and of `β` (each) set to zero, never in the intercept row.
    pub zeros: usize,
    pub sigma2_lambda: f64,
    pub sigma2_alpha: f64,
    /// Interior knots of the smoothing basis for the components.
    pub smoothing_knots: usize,
}

impl GeneratorConfig {
    pub fn baseline(n: usize, a: usize, noise_sigma2: f64) -> Self {
        GeneratorConfig {
            n,
            a,
            noise_sigma2,
            intercept: 15.0,
            n_covariates: 10,
            components: 5,
            zeros: 3,
            sigma2_lambda: 1.0,
            sigma2_alpha: 0.5,
            smoothing_knots: 7,
        }
    }

    pub fn sparse(n: usize, a: usize, noise_sigma2: f64) -> Self {
        GeneratorConfig {
            intercept: -1.5,
            ..Self::baseline(n, a, noise_sigma2)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outliers {
    pub subpops: Vec<usize>,
    pub ages: Vec<i64>,
    pub magnitude: f64,
}

/// Generating parameters. `noise` holds the latent Gaussian errors so that
/// variants can redraw counts for selected rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TruthParams<T: Real> {
    pub phi: DMatrix<T>,
    pub lambda: DMatrix<T>,
    pub alpha: DVector<T>,
    pub beta: DMatrix<T>,
    pub delta: DVector<T>,
    pub sigma2: T,
    pub sigma2_alpha: T,
    pub sigma2_lambda: T,
    pub noise: DMatrix<T>,
    pub outliers: Option<Outliers>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SyntheticTruth<T: Real> {
    pub panel: AgeCountPanel<T>,
    pub covariates: CovariateMatrix<T>,
    /// Systematic signal `α_i + Σ_q Φ_q(x) λ_{i,q}` (plus any outlier jump).
    pub signal: DMatrix<T>,
    pub params: TruthParams<T>,
    pub source: ComponentSource,
    /// `(subpop, age index)` cells masked by [`drop_one_per_curve`].
    pub dropped: Vec<(usize, usize)>,
    pub config: GeneratorConfig,
}

/// Five closed-form age shapes on `t = x / (A - 1)`: a young-adult peak, a
/// linear gradient, an early-childhood decay, a late-life bump and a full
/// sine cycle.
pub fn synthetic_shapes(a: usize) -> DMatrix<f64> {
    let denom = (a.max(2) - 1) as f64;
    DMatrix::from_fn(a, 5, |x, j| {
        let t = x as f64 / denom;
        match j {
            0 => (-((t - 0.35) / 0.12).powi(2)).exp(),
            1 => t,
            2 => (-t / 0.1).exp(),
            3 => (-((t - 0.75) / 0.1).powi(2)).exp(),
            _ => (2.0 * std::f64::consts::PI * t).sin(),
        }
    })
}

/// Project raw component curves onto a cubic spline space with equally
/// spaced interior knots, center them over ages and orthonormalize.
fn smooth_components<T: Real>(raw: &DMatrix<f64>, knots: usize) -> Result<DMatrix<T>> {
    let a = raw.nrows();
    let ages: Vec<i64> = (0..a as i64).collect();
    let (interior, boundary) = Knots::Equal { count: knots }.resolve(&ages)?;
    let ages_f: Vec<f64> = ages.iter().map(|&x| x as f64).collect();
    let basis = build_basis::<f64>(&ages_f, 3, &interior, boundary, false)?;
    let (coef, _) = least_squares(&basis.b, raw);
    let mut smooth = &basis.b * coef;
    for mut col in smooth.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let (q, _) = thin_qr_positive(&smooth).map_err(|_| Error::invalid("component shapes are collinear"))?;
    Ok(q.map(T::lit))
}

fn draw_counts<T: Real, R: Rng + ?Sized>(log_mean: &DMatrix<T>, rng: &mut R) -> DMatrix<u64> {
    log_mean.map(|z| T::poisson(z.exp(), rng))
}

fn compose_signal<T: Real>(alpha: &DVector<T>, phi: &DMatrix<T>, lambda: &DMatrix<T>) -> DMatrix<T> {
    let mut s = lambda * phi.transpose();
    for i in 0..s.nrows() {
        s.row_mut(i).add_scalar_mut(alpha[i]);
    }
    s
}

/// Baseline dataset. With `source_panel`, the components are its leading
/// `log(1 + y)` singular vectors instead of the closed-form shapes.
pub fn generate_baseline<T: Real>(
    seed: u64,
    cfg: &GeneratorConfig,
    source_panel: Option<&AgeCountPanel<T>>,
) -> Result<SyntheticTruth<T>> {
    let (n, a, c) = (cfg.n, cfg.a, cfg.components);
    if n < 2 || a < cfg.smoothing_knots + 4 {
        return Err(Error::invalid(format!("N = {n}, A = {a} too small for the component basis")));
    }
    if cfg.smoothing_knots + 4 < c {
        return Err(Error::invalid("component basis has fewer columns than components"));
    }
    let r = cfg.n_covariates + 1;
    if cfg.zeros > cfg.n_covariates || cfg.zeros > (r - 1) * c {
        return Err(Error::invalid("more zero coefficients requested than available"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (raw, source) = match source_panel {
        Some(p) => {
            if p.a() != a {
                return Err(Error::invalid("source panel age grid differs from A"));
            }
            let l = p.log1p().map(|v| v.to_f64());
            let mut centered = l.clone();
            for i in 0..centered.nrows() {
                let m = centered.row(i).mean();
                centered.row_mut(i).add_scalar_mut(-m);
            }
            let (_, _, v) = sorted_svd(&centered);
            if v.ncols() < c {
                return Err(Error::invalid("source panel has too few singular vectors"));
            }
            (v.columns(0, c).into_owned(), ComponentSource::SourcePanel)
        }
        None => {
            if c > 5 {
                return Err(Error::invalid("at most five closed-form components are available"));
            }
            let s = synthetic_shapes(a);
            (s.columns(0, c).into_owned(), ComponentSource::SyntheticShapes)
        }
    };
    let phi: DMatrix<T> = smooth_components(&raw, cfg.smoothing_knots)?;

    let x = DMatrix::from_fn(n, cfg.n_covariates, |_, _| T::std_normal(&mut rng));
    let names: Vec<String> = (1..=cfg.n_covariates).map(|j| format!("x{j}")).collect();
    let covariates = CovariateMatrix::from_columns(x, names, &[])?;
    let w = &covariates.values;

    let mut delta = DVector::from_fn(r, |_, _| T::std_normal(&mut rng));
    delta[0] = T::lit(cfg.intercept);
    let mut beta = DMatrix::from_fn(r, c, |_, _| T::std_normal(&mut rng));
    for k in sample_indices(&mut rng, r - 1, cfg.zeros) {
        delta[k + 1] = T::zero();
    }
    for k in sample_indices(&mut rng, (r - 1) * c, cfg.zeros) {
        beta[(1 + k % (r - 1), k / (r - 1))] = T::zero();
    }
    let sl = T::lit(cfg.sigma2_lambda);
    let lambda = (w * &beta).map(|m| T::normal(m, sl, &mut rng));
    let sa = T::lit(cfg.sigma2_alpha);
    let alpha = (w * &delta).map(|m| T::normal(m, sa, &mut rng));
    let signal = compose_signal(&alpha, &phi, &lambda);
    let s2 = T::lit(cfg.noise_sigma2);
    let noise = DMatrix::from_fn(n, a, |_, _| T::normal(T::zero(), s2, &mut rng));
    let counts = draw_counts(&(&signal + &noise), &mut rng);
    let panel = AgeCountPanel::new(
        counts,
        (0..a as i64).collect(),
        (0..n).map(|i| format!("s{:03}", i + 1)).collect(),
    )?;
    Ok(SyntheticTruth {
        panel,
        covariates,
        signal,
        params: TruthParams {
            phi,
            lambda,
            alpha,
            beta,
            delta,
            sigma2: s2,
            sigma2_alpha: sa,
            sigma2_lambda: sl,
            noise,
            outliers: None,
        },
        source,
        dropped: Vec::new(),
        config: cfg.clone(),
    })
}

/// Add a `+1` log-scale jump at ages 18–20 to 5% of subpopulations and
/// redraw their counts; every other row is left untouched.
pub fn generate_outlier_variant<T: Real>(base: &SyntheticTruth<T>, seed: u64) -> Result<SyntheticTruth<T>> {
    const MAGNITUDE: f64 = 1.0;
    let jump_ages = [18i64, 19, 20];
    let cols: Vec<usize> = jump_ages
        .iter()
        .map(|age| {
            base.panel
                .ages
                .iter()
                .position(|a| a == age)
                .ok_or_else(|| Error::invalid(format!("age grid does not cover age {age}")))
        })
        .collect::<Result<_>>()?;
    let n = base.panel.n();
    let count = ((n as f64) * 0.05).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample_indices(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    let mut out = base.clone();
    for &i in &chosen {
        for &x in &cols {
            out.signal[(i, x)] += T::lit(MAGNITUDE);
        }
        for x in 0..base.panel.a() {
            let z = out.signal[(i, x)] + out.params.noise[(i, x)];
            out.panel.counts[(i, x)] = T::poisson(z.exp(), &mut rng);
        }
    }
    out.params.outliers = Some(Outliers {
        subpops: chosen,
        ages: jump_ages.to_vec(),
        magnitude: MAGNITUDE,
    });
    Ok(out)
}

/// Baseline generator with a `-1.5` intercept, which yields many zeros.
pub fn generate_sparse_variant<T: Real>(seed: u64, n: usize, a: usize, noise_sigma2: f64) -> Result<SyntheticTruth<T>> {
    generate_baseline(seed, &GeneratorConfig::sparse(n, a, noise_sigma2), None)
}

/// Mask one randomly chosen observed cell in every row.
pub fn drop_one_per_curve<T: Real>(truth: &SyntheticTruth<T>, seed: u64) -> Result<SyntheticTruth<T>> {
    if truth.panel.a() < 2 {
        return Err(Error::invalid("need at least two ages to drop a cell"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = truth.clone();
    out.dropped.clear();
    for i in 0..out.panel.n() {
        let obs: Vec<usize> = (0..out.panel.a()).filter(|&x| out.panel.observed[(i, x)]).collect();
        if obs.len() < 2 {
            continue;
        }
        let x = obs[rng.random_range(0..obs.len())];
        out.panel.observed[(i, x)] = false;
        out.dropped.push((i, x));
    }
    Ok(out)
}

impl<T: Real> SyntheticTruth<T> {
    /// Write `counts.csv`, `covariates.csv` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_counts_csv(&self.panel, &dir.join("counts.csv"))?;
        write_covariates_csv(&self.covariates, &self.panel.subpop_ids, &dir.join("covariates.csv"))?;
        let path = dir.join("truth.json");
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }
}
