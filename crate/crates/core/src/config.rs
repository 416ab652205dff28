//! Run configuration, deserialized from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the spline knots go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Knots {
    /// Interior and boundary knots given verbatim.
    Explicit { interior: Vec<f64>, boundary: (f64, f64) },
    /// Interior knots at `from, from + step, ..., <= to`; boundary knots at
    /// the age range.
    Every { step: f64, from: f64, to: f64 },
    /// `count` equally spaced interior knots strictly inside the age range.
    Equal { count: usize },
}

impl Knots {
    /// Case-study layout: every five years from 5 to 65, boundaries 0 and 95.
    pub fn case_study() -> Self {
        Knots::Explicit {
            interior: (1..=13).map(|k| 5.0 * k as f64).collect(),
            boundary: (0.0, 95.0),
        }
    }

    /// Resolve to `(interior, boundary)` for a concrete age grid.
    pub fn resolve(&self, ages: &[i64]) -> Result<(Vec<f64>, (f64, f64))> {
        let (lo, hi) = match (ages.first(), ages.last()) {
            (Some(&a), Some(&b)) => (a as f64, b as f64),
            _ => return Err(Error::Config("empty age grid".into())),
        };
        match self {
            Knots::Explicit { interior, boundary } => Ok((interior.clone(), *boundary)),
            Knots::Every { step, from, to } => {
                if !(*step > 0.0) {
                    return Err(Error::Config("knot step must be positive".into()));
                }
                let mut v = Vec::new();
                let mut k = *from;
                while k <= *to + 1e-9 {
                    if k > lo && k < hi {
                        v.push(k);
                    }
                    k += step;
                }
                Ok((v, (lo, hi)))
            }
            Knots::Equal { count } => {
                let width = (hi - lo) / (*count as f64 + 1.0);
                let v = (1..=*count).map(|j| lo + width * j as f64).collect();
                Ok((v, (lo, hi)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub burnin: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            burnin: 25_000,
            draws: 50_000,
            thin: 5,
            seed: 1,
        }
    }
}

impl McmcConfig {
    /// Short chains used by the simulation and cross-validation harnesses.
    pub fn desk_scale(seed: u64) -> Self {
        McmcConfig {
            burnin: 2000,
            draws: 2000,
            thin: 2,
            seed,
        }
    }

    pub fn stored(&self) -> usize {
        self.draws / self.thin
    }
}

/// Inverse-gamma prior constants (shape, rate) for the variance blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    /// σ² prior.
    pub c0: f64,
    pub big_c0: f64,
    /// τ_q prior.
    pub d0: f64,
    pub big_d0: f64,
    /// σ²_α prior.
    pub s0: f64,
    pub big_s0: f64,
    /// σ²_{λ,q} prior.
    pub l0: f64,
    pub big_l0: f64,
    /// Prior precision on the first two spline coefficients of every factor.
    /// Zero gives the flat prior.
    pub f0_precision: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            c0: 1e-3,
            big_c0: 1e-3,
            d0: 1e-3,
            big_d0: 1e-3,
            s0: 1e-3,
            big_s0: 1e-3,
            l0: 1e-3,
            big_l0: 1e-3,
            f0_precision: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZUpdate {
    pub target_accept: f64,
    pub batch: usize,
    /// Initial multiplier on the curvature-scaled proposal standard deviation.
    pub initial_scale: f64,
}

impl Default for ZUpdate {
    fn default() -> Self {
        ZUpdate {
            target_accept: 0.44,
            batch: 50,
            initial_scale: 2.4,
        }
    }
}

/// When the orthonormal rotation of the factors is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    /// Rotate the chain state right after every spline-coefficient draw.
    #[default]
    InChain,
    /// Leave the chain state unrotated and rotate only the stored copies.
    OnStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateOptions {
    /// Center and scale continuous (non-binary, non-intercept) columns.
    pub standardize: bool,
    /// Columns that receive an appended quadratic companion.
    pub quadratic: Vec<String>,
}

impl Default for CovariateOptions {
    fn default() -> Self {
        CovariateOptions {
            standardize: true,
            quadratic: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of latent age functions.
    pub q: usize,
    pub spline_degree: usize,
    pub knots: Knots,
    /// Mean-center the basis columns so every factor has zero age-mean.
    pub centered: bool,
    pub mcmc: McmcConfig,
    pub hyper: Hyper,
    pub z_update: ZUpdate,
    /// Cells with `y >= threshold` are pinned at `z = ln y`.
    pub large_count_threshold: Option<u64>,
    pub identification: Identification,
    /// Keep the latent `z` matrix in every stored state.
    pub store_latent: bool,
    /// Record the largest change in `Φ λᵀ` caused by any identification
    /// rotation during the run.
    pub audit_identification: bool,
    pub covariates: CovariateOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            q: 6,
            spline_degree: 3,
            knots: Knots::case_study(),
            centered: true,
            mcmc: McmcConfig::default(),
            hyper: Hyper::default(),
            z_update: ZUpdate::default(),
            large_count_threshold: None,
            identification: Identification::default(),
            store_latent: false,
            audit_identification: false,
            covariates: CovariateOptions::default(),
        }
    }
}

impl ModelConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale configuration for simulation studies: seven equally spaced
    /// interior knots and short chains.
    pub fn desk_scale(q: usize, seed: u64) -> Self {
        ModelConfig {
            q,
            knots: Knots::Equal { count: 7 },
            mcmc: McmcConfig::desk_scale(seed),
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.mcmc.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        let h = &self.hyper;
        for (name, v) in [
            ("c0", h.c0),
            ("C0", h.big_c0),
            ("d0", h.d0),
            ("D0", h.big_d0),
            ("s0", h.s0),
            ("S0", h.big_s0),
            ("l0", h.l0),
            ("L0", h.big_l0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("hyperparameter {name} must be > 0")));
            }
        }
        if !(h.f0_precision >= 0.0) {
            return Err(Error::Config("f0_precision must be >= 0".into()));
        }
        let z = &self.z_update;
        if !(z.target_accept > 0.0 && z.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        if z.batch == 0 || !(z.initial_scale > 0.0) {
            return Err(Error::Config("z_update batch and initial_scale must be positive".into()));
        }
        Ok(())
    }
}
