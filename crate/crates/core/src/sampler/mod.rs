//! Metropolis-within-Gibbs sampler for the latent-factor model.

mod adapt;
mod identify;
mod state;
pub mod updates;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adapt::{latent_log_target, update_latent_z, AdaptiveMHState};
pub use identify::{apply_identification, Identified};
pub use state::{Horseshoe, ModelState};

use crate::config::{Identification, ModelConfig};
use crate::data::{AgeCountPanel, CovariateMatrix, Standardization};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spline::SplineBasis;

/// Descriptive information carried alongside the draws so that every
/// derived quantity can be computed from a checkpoint alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelMeta<T: Real> {
    pub ages: Vec<i64>,
    pub subpop_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub quad_pairs: Vec<(usize, usize)>,
    pub standardization: Standardization<T>,
    /// Covariates on their original scale, `N x R`.
    pub covariates: DMatrix<T>,
    pub offsets: DMatrix<T>,
}

/// Everything the updates condition on that does not change over a run.
#[derive(Debug, Clone)]
pub struct ModelData<T: Real> {
    pub counts: DMatrix<u64>,
    pub observed: DMatrix<bool>,
    pub offsets: DMatrix<T>,
    /// Cells held at `z = ln y` by the large-count approximation.
    pub pinned: DMatrix<bool>,
    /// Design matrix after standardization, `N x R`.
    pub w: DMatrix<T>,
    pub wtw: DMatrix<T>,
    pub basis: SplineBasis<T>,
    pub btb: DMatrix<T>,
    pub q: usize,
    pub meta: ModelMeta<T>,
}

impl<T: Real> ModelData<T> {
    pub fn new(panel: &AgeCountPanel<T>, covariates: &CovariateMatrix<T>, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        panel.validate()?;
        covariates.validate(panel.n())?;
        let basis = SplineBasis::from_config(&panel.ages, config)?;
        let rank = panel.n().min(panel.a()).min(basis.k() - usize::from(basis.centered));
        if config.q > rank {
            return Err(Error::Config(format!(
                "q = {} exceeds the number of identifiable factors ({rank})",
                config.q
            )));
        }
        let standardization = if config.covariates.standardize {
            Standardization::fit(covariates)
        } else {
            Standardization::identity(covariates.r())
        };
        let w = standardization.apply(&covariates.values);
        let pinned = match config.large_count_threshold {
            Some(t) => panel.counts.zip_map(&panel.observed, |y, o| o && y >= t),
            None => DMatrix::from_element(panel.n(), panel.a(), false),
        };
        Ok(ModelData {
            counts: panel.counts.clone(),
            observed: panel.observed.clone(),
            offsets: panel.offsets.clone(),
            pinned,
            wtw: w.transpose() * &w,
            w,
            btb: basis.b.transpose() * &basis.b,
            basis,
            q: config.q,
            meta: ModelMeta {
                ages: panel.ages.clone(),
                subpop_ids: panel.subpop_ids.clone(),
                covariate_names: covariates.names.clone(),
                quad_pairs: covariates.quad_pairs.clone(),
                standardization,
                covariates: covariates.values.clone(),
                offsets: panel.offsets.clone(),
            },
        })
    }

    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn a(&self) -> usize {
        self.counts.ncols()
    }

    pub fn r(&self) -> usize {
        self.w.ncols()
    }
}

/// A running chain: current state, proposal tuning and RNG. Serializes to a
/// checkpoint from which sampling resumes bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Chain<T: Real> {
    pub state: ModelState<T>,
    pub mh: AdaptiveMHState<T>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub config: ModelConfig,
    /// Largest entrywise change of `Φ λᵀ` across identification rotations,
    /// tracked when auditing is enabled.
    #[serde(default)]
    pub identification_drift: Option<f64>,
}

fn block<E>(iteration: u64, block: &'static str) -> impl FnOnce(E) -> Error
where
    E: Into<Error>,
{
    move |e| Error::Sampler {
        iteration,
        block,
        source: Box::new(e.into()),
    }
}

impl<T: Real> Chain<T> {
    pub fn new(data: &ModelData<T>, config: &ModelConfig) -> Result<Self> {
        let state = ModelState::initialize(data).map_err(block(0, "initialization"))?;
        Ok(Self::from_state(state, data, config))
    }

    pub fn from_state(state: ModelState<T>, data: &ModelData<T>, config: &ModelConfig) -> Self {
        Chain {
            state,
            mh: AdaptiveMHState::new(data.n(), data.a(), &config.z_update),
            rng: ChaCha8Rng::seed_from_u64(config.mcmc.seed),
            iteration: 0,
            config: config.clone(),
            identification_drift: config.audit_identification.then_some(0.0),
        }
    }

    /// One full sweep in the fixed block order. `adapt` enables proposal
    /// tuning for the latent updates.
    pub fn sweep(&mut self, data: &ModelData<T>, adapt: bool) -> Result<()> {
        let it = self.iteration;
        let h = &self.config.hyper;
        let in_chain = self.config.identification == Identification::InChain;
        let s = &mut self.state;
        let rng = &mut self.rng;
        let drift = &mut self.identification_drift;

        update_latent_z(s, data, &mut self.mh, adapt, rng);
        updates::update_sigma2(s, data, h, rng);
        updates::update_alpha(s, data, rng);
        for q in 0..s.q() {
            updates::update_spline_coeffs(s, data, h, q, rng).map_err(block(it, "spline coefficients"))?;
            if in_chain {
                identify_audited(s, data, drift).map_err(block(it, "identification"))?;
            }
        }
        updates::update_loadings(s, data, rng).map_err(block(it, "loadings"))?;
        updates::update_tau(s, data, h, rng);
        updates::update_kappa(s, data, rng);
        updates::update_beta(s, data, in_chain, rng).map_err(block(it, "beta"))?;
        if in_chain {
            // The collapsed β draw integrated the loadings out; refresh them
            // from their conditional before anything else uses them.
            updates::update_loadings(s, data, rng).map_err(block(it, "loadings"))?;
        }
        updates::update_delta(s, data, rng).map_err(block(it, "delta"))?;
        updates::update_hier_variances(s, data, h, rng);
        updates::update_horseshoe(&mut s.hs_beta, &s.beta, rng);
        let delta = DMatrix::from_column_slice(s.delta.len(), 1, s.delta.as_slice());
        updates::update_horseshoe(&mut s.hs_delta, &delta, rng);

        check_finite(s).map_err(block(it, "state"))?;
        self.iteration += 1;
        Ok(())
    }
}

fn identify_audited<T: Real>(s: &mut ModelState<T>, data: &ModelData<T>, drift: &mut Option<f64>) -> Result<()> {
    match drift {
        Some(d) => {
            let before = s.factor_fit();
            s.identify(data)?;
            *d = d.max((s.factor_fit() - before).amax().to_f64());
            Ok(())
        }
        None => s.identify(data),
    }
}

fn check_finite<T: Real>(s: &ModelState<T>) -> Result<()> {
    let scalars = [s.sigma2, s.sigma2_alpha];
    let ok = scalars.iter().all(|v| v.is_finite())
        && s.z.iter().all(|v| v.is_finite())
        && s.lambda.iter().all(|v| v.is_finite())
        && s.f.iter().all(|v| v.is_finite())
        && s.alpha.iter().all(|v| v.is_finite())
        && s.tau.iter().all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("non-finite parameter value"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DrawsMeta<T: Real> {
    pub config: ModelConfig,
    pub model: ModelMeta<T>,
    /// Lifetime MH acceptance rate per cell (`NaN` for unobserved or pinned
    /// cells, written as `null`).
    pub acceptance: DMatrix<Option<f64>>,
    /// Wall-clock seconds; not serialized so that checkpoints stay
    /// reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
    /// Present when the run audited its identification rotations.
    #[serde(default)]
    pub identification_drift: Option<f64>,
}

/// Thinned post-burn-in states. Every stored state is identified, so its
/// `phi` has orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PosteriorDraws<T: Real> {
    pub states: Vec<ModelState<T>>,
    pub meta: DrawsMeta<T>,
}

impl<T: Real> PosteriorDraws<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn phi_draws(&self) -> impl Iterator<Item = &DMatrix<T>> {
        self.states.iter().map(|s| &s.phi)
    }

    pub fn ages(&self) -> &[i64] {
        &self.meta.model.ages
    }

    pub fn subpop_index(&self, id: &str) -> Result<usize> {
        self.meta
            .model
            .subpop_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSubpop(id.to_string()))
    }

    /// Posterior mean of a per-state scalar.
    pub fn mean_of(&self, f: impl Fn(&ModelState<T>) -> T) -> T {
        let sum = self.states.iter().fold(T::zero(), |acc, s| acc + f(s));
        sum / T::from_count(self.states.len().max(1))
    }

    /// Posterior mean of `α_i + Φ λ_i` for every subpopulation, `N x A`.
    pub fn mean_signal(&self) -> DMatrix<T> {
        let mut acc = DMatrix::<T>::zeros(self.meta.model.subpop_ids.len(), self.meta.model.ages.len());
        for s in &self.states {
            acc += s.signal();
        }
        acc / T::from_count(self.states.len().max(1))
    }

    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Run burn-in and sampling; return every `thin`-th post-burn-in state.
pub fn run_mcmc<T: Real>(
    panel: &AgeCountPanel<T>,
    covariates: &CovariateMatrix<T>,
    config: &ModelConfig,
) -> Result<PosteriorDraws<T>> {
    let data = ModelData::new(panel, covariates, config)?;
    let chain = Chain::new(&data, config)?;
    run_chain(chain, &data)
}

/// Continue an existing chain through its configured burn-in and draws.
pub fn run_chain<T: Real>(mut chain: Chain<T>, data: &ModelData<T>) -> Result<PosteriorDraws<T>> {
    let start = Instant::now();
    let config = chain.config.clone();
    let mcmc = &config.mcmc;
    let rotate = config.identification == Identification::OnStore;
    for _ in 0..mcmc.burnin {
        chain.sweep(data, true)?;
    }
    let mut states = Vec::with_capacity(mcmc.stored());
    for t in 0..mcmc.draws {
        chain.sweep(data, false)?;
        if (t + 1) % mcmc.thin == 0 {
            let mut stored = chain.state.stored_copy(data, config.store_latent, false)?;
            if rotate {
                identify_audited(&mut stored, data, &mut chain.identification_drift)
                    .map_err(block(chain.iteration, "identification"))?;
            }
            states.push(stored);
        }
    }
    let rates = chain.mh.acceptance_rates();
    let acceptance = rates.map(|r| if r.is_nan() { None } else { Some(r) });
    log::info!(
        "sampler finished {} sweeps, kept {} states in {:.1}s",
        chain.iteration,
        states.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(PosteriorDraws {
        states,
        meta: DrawsMeta {
            config,
            model: data.meta.clone(),
            acceptance,
            wall_time_secs: start.elapsed().as_secs_f64(),
            identification_drift: chain.identification_drift,
        },
    })
}

/// Posterior mean of a vector-valued quantity across states.
pub fn mean_vector<T: Real>(draws: &PosteriorDraws<T>, f: impl Fn(&ModelState<T>) -> DVector<T>) -> Option<DVector<T>> {
    let mut it = draws.states.iter();
    let first = f(it.next()?);
    let sum = it.fold(first, |acc, s| acc + f(s));
    Some(sum / T::from_count(draws.len()))
}
