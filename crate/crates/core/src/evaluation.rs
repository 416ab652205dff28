//! Accuracy metrics and the simulation and cross-validation protocols.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    interpolate_missing, smooth_rows, svd_reconstruct, GcvGrid, Interpolation, TwoStage,
};
use crate::config::{McmcConfig, ModelConfig};
use crate::data::{AgeCountPanel, CovariateMatrix};
use crate::error::{Error, Result};
use crate::inference::{hierarchical_mean_curve, predictive_new};
use crate::sampler::{run_mcmc, PosteriorDraws};
use crate::scalar::Real;
use crate::synthetic::{
    drop_one_per_curve, generate_baseline, generate_outlier_variant, GeneratorConfig, SyntheticTruth,
};

/// What the predictions are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `log(1 + y)` of observed counts.
    Log1p,
    /// The known systematic signal of simulated data.
    Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub rmse: f64,
    pub mae: f64,
    /// Mean absolute percentage error in percent, over cells with nonzero
    /// truth.
    pub mape: f64,
    /// Cells left out of the MAPE because the truth was zero.
    pub mape_excluded: usize,
    /// Pearson correlation; `NaN` when either side is constant.
    pub corr: f64,
    pub cells: usize,
}

/// Score `pred` against `truth` over the cells selected by `mask` (all
/// cells when `None`).
pub fn score<T: Real>(pred: &DMatrix<T>, truth: &DMatrix<T>, mask: Option<&DMatrix<bool>>) -> Result<Score> {
    if pred.shape() != truth.shape() {
        return Err(Error::invalid("prediction and truth differ in shape"));
    }
    if let Some(m) = mask {
        if m.shape() != pred.shape() {
            return Err(Error::invalid("mask shape differs from the prediction"));
        }
    }
    let pairs: Vec<(f64, f64)> = pred
        .iter()
        .zip(truth.iter())
        .enumerate()
        .filter(|(k, _)| mask.is_none_or(|m| m.as_slice()[*k]))
        .map(|(_, (&p, &t))| (p.to_f64(), t.to_f64()))
        .collect();
    score_pairs(&pairs)
}

/// Score paired `(prediction, truth)` values.
pub fn score_pairs(pairs: &[(f64, f64)]) -> Result<Score> {
    if pairs.is_empty() {
        return Err(Error::invalid("no cells selected for scoring"));
    }
    let n = pairs.len() as f64;
    let (mut se, mut ae, mut pe) = (0.0, 0.0, 0.0);
    let mut pe_n = 0usize;
    for &(p, t) in pairs {
        let e = p - t;
        se += e * e;
        ae += e.abs();
        if t != 0.0 {
            pe += (e / t).abs();
            pe_n += 1;
        }
    }
    let mp = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(p, t) in pairs {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp) * (p - mp);
        syy += (t - mt) * (t - mt);
    }
    let corr = if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        f64::NAN
    };
    Ok(Score {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        mape: if pe_n > 0 { 100.0 * pe / pe_n as f64 } else { f64::NAN },
        mape_excluded: pairs.len() - pe_n,
        corr,
        cells: pairs.len(),
    })
}

/// One model on one replicate (or fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub replicate: usize,
    pub score: Option<Score>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMean {
    pub model: String,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub corr: f64,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub experiment: String,
    pub scale: Scale,
    pub replicates: usize,
    pub rows: Vec<ReportRow>,
}

impl ScoreReport {
    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.model) {
                out.push(r.model.clone());
            }
        }
        out
    }

    pub fn score(&self, model: &str, replicate: usize) -> Option<Score> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.replicate == replicate)
            .and_then(|r| r.score)
    }

    /// Per-model means over successful replicates, in first-seen model order.
    pub fn means(&self) -> Vec<ModelMean> {
        self.models()
            .into_iter()
            .map(|model| {
                let ok: Vec<Score> = self
                    .rows
                    .iter()
                    .filter(|r| r.model == model)
                    .filter_map(|r| r.score)
                    .collect();
                let k = ok.len().max(1) as f64;
                let failed = self.rows.iter().filter(|r| r.model == model && r.score.is_none()).count();
                ModelMean {
                    rmse: ok.iter().map(|s| s.rmse).sum::<f64>() / k,
                    mae: ok.iter().map(|s| s.mae).sum::<f64>() / k,
                    mape: ok.iter().map(|s| s.mape).sum::<f64>() / k,
                    corr: ok.iter().map(|s| s.corr).sum::<f64>() / k,
                    succeeded: ok.len(),
                    failed,
                    model,
                }
            })
            .collect()
    }

    /// Replicates on which `a` has strictly lower RMSE than `b`.
    pub fn rmse_wins(&self, a: &str, b: &str) -> usize {
        (0..self.replicates)
            .filter(|&r| match (self.score(a, r), self.score(b, r)) {
                (Some(x), Some(y)) => x.rmse < y.rmse,
                _ => false,
            })
            .count()
    }

    /// Replicates on which `a` has RMSE no larger than `b`.
    pub fn rmse_no_worse(&self, a: &str, b: &str) -> usize {
        (0..self.replicates)
            .filter(|&r| match (self.score(a, r), self.score(b, r)) {
                (Some(x), Some(y)) => x.rmse <= y.rmse,
                _ => false,
            })
            .count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "experiment", "scale", "model", "replicate", "rmse", "mae", "mape", "mape_excluded", "corr", "cells",
            "error",
        ])
        .map_err(csv_err)?;
        let scale = match self.scale {
            Scale::Log1p => "log1p",
            Scale::Signal => "signal",
        };
        for r in &self.rows {
            let (rmse, mae, mape, excl, corr, cells) = match r.score {
                Some(s) => (
                    s.rmse.to_string(),
                    s.mae.to_string(),
                    s.mape.to_string(),
                    s.mape_excluded.to_string(),
                    s.corr.to_string(),
                    s.cells.to_string(),
                ),
                None => Default::default(),
            };
            w.write_record([
                self.experiment.as_str(),
                scale,
                &r.model,
                &r.replicate.to_string(),
                &rmse,
                &mae,
                &mape,
                &excl,
                &corr,
                &cells,
                r.error.as_deref().unwrap_or(""),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Generator variant used by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Outlier,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub generator: GeneratorConfig,
    pub variant: Variant,
    pub seed: u64,
    /// Factors in the Bayesian fit.
    pub q: usize,
    /// Rank of the SVD competitors.
    pub svd_rank: usize,
    pub holdout_fraction: f64,
    pub mcmc: McmcConfig,
    pub grid: GcvGrid,
}

impl ExperimentConfig {
    /// Full-scale design: 25 replicates and long chains.
    pub fn full(n: usize, a: usize, noise_sigma2: f64) -> Self {
        ExperimentConfig {
            replicates: 25,
            generator: GeneratorConfig::baseline(n, a, noise_sigma2),
            variant: Variant::Baseline,
            seed: 1,
            q: 5,
            svd_rank: 5,
            holdout_fraction: 0.2,
            mcmc: McmcConfig::default(),
            grid: GcvGrid::default(),
        }
    }

    /// Desk-scale design: `N = 100`, `A = 60`, five replicates, short chains.
    pub fn desk_scale(noise_sigma2: f64) -> Self {
        ExperimentConfig {
            replicates: 5,
            mcmc: McmcConfig::desk_scale(1),
            ..Self::full(100, 60, noise_sigma2)
        }
    }

    fn model_config(&self, seed: u64) -> ModelConfig {
        let mut c = ModelConfig::desk_scale(self.q, seed);
        c.mcmc = McmcConfig { seed, ..self.mcmc.clone() };
        c
    }
}

/// Seed for stream `index` derived from `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn generate<T: Real>(cfg: &ExperimentConfig, replicate: usize) -> Result<SyntheticTruth<T>> {
    let seed = derive_seed(cfg.seed, replicate as u64);
    let gen = match cfg.variant {
        Variant::Sparse => GeneratorConfig {
            intercept: -1.5,
            ..cfg.generator.clone()
        },
        _ => cfg.generator.clone(),
    };
    let base = generate_baseline(seed, &gen, None)?;
    match cfg.variant {
        Variant::Outlier => generate_outlier_variant(&base, derive_seed(seed, 1)),
        _ => Ok(base),
    }
}

fn row(model: &str, replicate: usize, result: Result<Score>) -> ReportRow {
    match result {
        Ok(s) => ReportRow {
            model: model.to_string(),
            replicate,
            score: Some(s),
            error: None,
        },
        Err(e) => ReportRow {
            model: model.to_string(),
            replicate,
            score: None,
            error: Some(e.to_string()),
        },
    }
}

fn fit_bayes<T: Real>(
    panel: &AgeCountPanel<T>,
    covariates: &CovariateMatrix<T>,
    cfg: &ModelConfig,
) -> Result<PosteriorDraws<T>> {
    run_mcmc(panel, covariates, cfg)
}

fn collect_report(experiment: &str, scale: Scale, replicates: usize, rows: Vec<Vec<ReportRow>>) -> ScoreReport {
    ScoreReport {
        experiment: experiment.to_string(),
        scale,
        replicates,
        rows: rows.into_iter().flatten().collect(),
    }
}

/// Fitted signal of every model on complete simulated panels.
pub fn run_insample_experiment<T: Real>(cfg: &ExperimentConfig) -> Result<ScoreReport> {
    let rows: Vec<Vec<ReportRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let truth = match generate::<T>(cfg, rep) {
                Ok(t) => t,
                Err(e) => return vec![row("generator", rep, Err(e))],
            };
            let seed = derive_seed(cfg.seed ^ 0xA5A5, rep as u64);
            let bayes = fit_bayes(&truth.panel, &truth.covariates, &cfg.model_config(seed))
                .and_then(|d| score(&d.mean_signal(), &truth.signal, None));
            let svd = svd_reconstruct(&truth.panel, cfg.svd_rank).and_then(|f| score(&f, &truth.signal, None));
            let pspline = (|| {
                let l = truth.panel.log1p();
                let fit = smooth_rows(&l, &truth.panel.ages, &cfg.grid)?;
                score(&fit, &truth.signal, None)
            })();
            vec![
                row("bayes", rep, bayes),
                row("svd", rep, svd),
                row("pspline", rep, pspline),
            ]
        })
        .collect();
    Ok(collect_report("insample", Scale::Signal, cfg.replicates, rows))
}

/// Imputation of one dropped cell per curve, scored on the dropped cells.
pub fn run_missing_experiment<T: Real>(cfg: &ExperimentConfig) -> Result<ScoreReport> {
    let rows: Vec<Vec<ReportRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let truth = match generate::<T>(cfg, rep)
                .and_then(|t| drop_one_per_curve(&t, derive_seed(cfg.seed ^ 0xD0D0, rep as u64)))
            {
                Ok(t) => t,
                Err(e) => return vec![row("generator", rep, Err(e))],
            };
            let mask = DMatrix::from_fn(truth.panel.n(), truth.panel.a(), |i, x| truth.dropped.contains(&(i, x)));
            let seed = derive_seed(cfg.seed ^ 0xA5A5, rep as u64);
            let bayes = fit_bayes(&truth.panel, &truth.covariates, &cfg.model_config(seed))
                .and_then(|d| score(&d.mean_signal(), &truth.signal, Some(&mask)));
            let interp = |method| -> Result<Score> {
                let l = truth.panel.log1p();
                let mut filled = l.clone();
                for i in 0..truth.panel.n() {
                    let series: Vec<Option<T>> = (0..truth.panel.a())
                        .map(|x| truth.panel.observed[(i, x)].then(|| l[(i, x)]))
                        .collect();
                    let f = interpolate_missing(&series, &truth.panel.ages, method, &cfg.grid)?;
                    filled.set_row(i, &DVector::from_vec(f).transpose());
                }
                score(&filled, &truth.signal, Some(&mask))
            };
            vec![
                row("bayes", rep, bayes),
                row("linear", rep, interp(Interpolation::Linear)),
                row("pspline", rep, interp(Interpolation::Pspline)),
            ]
        })
        .collect();
    Ok(collect_report("missing", Scale::Signal, cfg.replicates, rows))
}

/// Indices of the held-out subpopulations for one replicate.
pub fn holdout_rows(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample_indices(&mut rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Bayesian hierarchical-mean predictions for held-out rows of `covariates`
/// after fitting on the remaining rows (`holdout` sorted).
pub fn bayes_holdout_predictions<T: Real>(
    panel: &AgeCountPanel<T>,
    covariates: &CovariateMatrix<T>,
    holdout: &[usize],
    cfg: &ModelConfig,
) -> Result<DMatrix<T>> {
    let train: Vec<usize> = (0..panel.n()).filter(|i| holdout.binary_search(i).is_err()).collect();
    let draws = run_mcmc(&panel.select_rows(&train), &covariates.select_rows(&train), cfg)?;
    let mut out = DMatrix::zeros(holdout.len(), panel.a());
    for (k, &i) in holdout.iter().enumerate() {
        let w: Vec<T> = covariates.values.row(i).iter().copied().collect();
        out.set_row(k, &hierarchical_mean_curve(&draws, &w)?.transpose());
    }
    Ok(out)
}

/// Prediction of entirely held-out curves from covariates alone.
pub fn run_oos_experiment<T: Real>(cfg: &ExperimentConfig) -> Result<ScoreReport> {
    let rows: Vec<Vec<ReportRow>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let truth = match generate::<T>(cfg, rep) {
                Ok(t) => t,
                Err(e) => return vec![row("generator", rep, Err(e))],
            };
            let n = truth.panel.n();
            let holdout = holdout_rows(n, cfg.holdout_fraction, derive_seed(cfg.seed ^ 0x0505, rep as u64));
            let target = truth.signal.select_rows(holdout.iter());
            let seed = derive_seed(cfg.seed ^ 0xA5A5, rep as u64);
            let bayes = bayes_holdout_predictions(&truth.panel, &truth.covariates, &holdout, &cfg.model_config(seed))
                .and_then(|p| score(&p, &target, None));
            let train: Vec<usize> = (0..n).filter(|i| holdout.binary_search(i).is_err()).collect();
            let two_stage = |smooth: bool| -> Result<Score> {
                let tp = truth.panel.select_rows(&train);
                let mut l = tp.log1p();
                if smooth {
                    l = smooth_rows(&l, &tp.ages, &cfg.grid)?;
                }
                let model = TwoStage::fit(&l, &truth.covariates.values.select_rows(train.iter()), cfg.svd_rank)?;
                let mut pred = DMatrix::zeros(holdout.len(), truth.panel.a());
                for (k, &i) in holdout.iter().enumerate() {
                    let w = truth.covariates.values.row(i).transpose();
                    pred.set_row(k, &model.predict(&w).transpose());
                }
                score(&pred, &target, None)
            };
            vec![
                row("bayes", rep, bayes),
                row("svd", rep, two_stage(false)),
                row("smooth_svd", rep, two_stage(true)),
            ]
        })
        .collect();
    Ok(collect_report("oos", Scale::Signal, cfg.replicates, rows))
}

/// Models available to leave-one-curve-out cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvModel {
    Bayes,
    BayesNoCov,
    Svd,
    SmoothSvd,
}

impl CvModel {
    pub fn name(&self) -> &'static str {
        match self {
            CvModel::Bayes => "bayes",
            CvModel::BayesNoCov => "bayes_nocov",
            CvModel::Svd => "svd",
            CvModel::SmoothSvd => "smooth_svd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(CvModel::Bayes),
            "bayes_nocov" => Ok(CvModel::BayesNoCov),
            "svd" => Ok(CvModel::Svd),
            "smooth_svd" => Ok(CvModel::SmoothSvd),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub models: Vec<CvModel>,
    pub q_list: Vec<usize>,
    /// Template for the Bayesian fits; `q` and the seed are set per fold.
    pub model: ModelConfig,
    pub seed: u64,
    pub grid: GcvGrid,
    pub level: f64,
}

/// One cell of the cross-validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub model: String,
    pub q: usize,
    pub rmse: f64,
    pub mae: f64,
    pub corr: f64,
    pub folds: usize,
    pub skipped: usize,
}

/// One fold result: `(model, q, fold, score, error)`.
pub type CvFold = (String, usize, usize, Option<Score>, Option<String>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
    pub folds: Vec<CvFold>,
}

impl CvTable {
    pub fn cell(&self, model: &str, q: usize) -> Option<&CvCell> {
        self.cells.iter().find(|c| c.model == model && c.q == q)
    }

    /// Table layout: one row per model, one RMSE/MAE/correlation triple per
    /// `Q`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut qs: Vec<usize> = self.cells.iter().map(|c| c.q).collect();
        qs.sort_unstable();
        qs.dedup();
        let mut models: Vec<String> = Vec::new();
        for c in &self.cells {
            if !models.contains(&c.model) {
                models.push(c.model.clone());
            }
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["model".to_string()];
        for q in &qs {
            header.extend([format!("rmse_q{q}"), format!("mae_q{q}"), format!("corr_q{q}")]);
        }
        header.push("skipped_folds".into());
        w.write_record(&header).map_err(csv_err)?;
        for m in &models {
            let mut rec = vec![m.clone()];
            let mut skipped = 0;
            for &q in &qs {
                match self.cell(m, q) {
                    Some(c) => {
                        rec.extend([c.rmse.to_string(), c.mae.to_string(), c.corr.to_string()]);
                        skipped += c.skipped;
                    }
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            rec.push(skipped.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn loco_fold<T: Real>(
    panel: &AgeCountPanel<T>,
    covariates: &CovariateMatrix<T>,
    model: CvModel,
    q: usize,
    fold: usize,
    cfg: &CvConfig,
) -> Result<Score> {
    let n = panel.n();
    let train: Vec<usize> = (0..n).filter(|&i| i != fold).collect();
    let tp = panel.select_rows(&train);
    let truth_row = panel.log1p().row(fold).into_owned();
    let observed: Vec<usize> = (0..panel.a()).filter(|&x| panel.observed[(fold, x)]).collect();
    let pred: DVector<T> = match model {
        CvModel::Bayes | CvModel::BayesNoCov => {
            let (tc, w_new) = if model == CvModel::Bayes {
                (
                    covariates.select_rows(&train),
                    covariates.values.row(fold).iter().copied().collect::<Vec<T>>(),
                )
            } else {
                (CovariateMatrix::intercept_only(train.len()), vec![T::one()])
            };
            let seed = derive_seed(cfg.seed, (fold * 1000 + q) as u64);
            let mut mc = cfg.model.clone();
            mc.q = q;
            mc.mcmc.seed = seed;
            let draws = run_mcmc(&tp, &tc, &mc)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7));
            let offsets = panel.offsets.row(fold).transpose();
            predictive_new(&draws, &w_new, Some(&offsets), cfg.level, &mut rng)?.log1p_mean()
        }
        CvModel::Svd | CvModel::SmoothSvd => {
            let mut l = tp.log1p();
            if model == CvModel::SmoothSvd {
                l = smooth_rows(&l, &tp.ages, &cfg.grid)?;
            }
            let fit = TwoStage::fit(&l, &covariates.values.select_rows(train.iter()), q)?;
            fit.predict(&covariates.values.row(fold).transpose())
        }
    };
    let pairs: Vec<(f64, f64)> = observed
        .iter()
        .map(|&x| (pred[x].to_f64(), truth_row[x].to_f64()))
        .collect();
    score_pairs(&pairs)
}

/// Leave-one-curve-out cross-validation: every subpopulation is held out in
/// turn, predicted from the other `N - 1` and scored on `log(1 + y)`.
/// Fold metrics are averaged with equal weight per fold.
pub fn loco_cv<T: Real>(panel: &AgeCountPanel<T>, covariates: &CovariateMatrix<T>, cfg: &CvConfig) -> Result<CvTable> {
    let n = panel.n();
    if n < 2 {
        return Err(Error::invalid("cross-validation needs at least two subpopulations"));
    }
    covariates.validate(n)?;
    let jobs: Vec<(CvModel, usize, usize)> = cfg
        .models
        .iter()
        .flat_map(|&m| cfg.q_list.iter().flat_map(move |&q| (0..n).map(move |f| (m, q, f))))
        .collect();
    let results: Vec<Result<Score>> = jobs
        .par_iter()
        .map(|&(m, q, f)| loco_fold(panel, covariates, m, q, f, cfg))
        .collect();
    let mut folds = Vec::with_capacity(jobs.len());
    for (&(m, q, f), r) in jobs.iter().zip(&results) {
        match r {
            Ok(s) => folds.push((m.name().to_string(), q, f, Some(*s), None)),
            Err(e) => {
                log::warn!("fold {f} of {} (Q = {q}) failed: {e}", m.name());
                folds.push((m.name().to_string(), q, f, None, Some(e.to_string())));
            }
        }
    }
    let mut cells = Vec::new();
    for &m in &cfg.models {
        for &q in &cfg.q_list {
            let ok: Vec<Score> = folds
                .iter()
                .filter(|(mm, qq, _, _, _)| mm == m.name() && *qq == q)
                .filter_map(|f| f.3)
                .collect();
            let k = ok.len().max(1) as f64;
            cells.push(CvCell {
                model: m.name().to_string(),
                q,
                rmse: ok.iter().map(|s| s.rmse).sum::<f64>() / k,
                mae: ok.iter().map(|s| s.mae).sum::<f64>() / k,
                corr: ok.iter().map(|s| s.corr).sum::<f64>() / k,
                folds: ok.len(),
                skipped: n - ok.len(),
            });
        }
    }
    Ok(CvTable { cells, folds })
}
