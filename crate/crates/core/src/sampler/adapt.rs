use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ZUpdate;
use crate::sampler::{ModelData, ModelState};
use crate::scalar::Real;

/// Per-cell proposal tuning for the latent log-mean updates.
///
/// The proposal standard deviation for cell `(i, x)` is
/// `exp(log_step) / sqrt(y + 1/σ²)`, i.e. a tuned multiple of the inverse
/// curvature of the target at its mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdaptiveMHState<T: Real> {
    pub log_step: DMatrix<T>,
    /// Acceptances within the current batch.
    pub accept_count: DMatrix<u32>,
    /// Completed adaptation batches.
    pub batch: u64,
    /// Sweeps into the current batch.
    pub in_batch: usize,
    pub batch_size: usize,
    pub target: f64,
    /// Lifetime acceptances and proposals, for diagnostics.
    pub total_accept: DMatrix<u64>,
    pub total_proposed: DMatrix<u64>,
}

impl<T: Real> AdaptiveMHState<T> {
    pub fn new(n: usize, a: usize, cfg: &ZUpdate) -> Self {
        AdaptiveMHState {
            log_step: DMatrix::from_element(n, a, T::lit(cfg.initial_scale.ln())),
            accept_count: DMatrix::zeros(n, a),
            batch: 0,
            in_batch: 0,
            batch_size: cfg.batch,
            target: cfg.target_accept,
            total_accept: DMatrix::zeros(n, a),
            total_proposed: DMatrix::zeros(n, a),
        }
    }

    /// Size of the next log-step adjustment.
    pub fn increment(&self) -> f64 {
        0.01f64.min(1.0 / ((self.batch + 1) as f64).sqrt())
    }

    /// Lifetime acceptance rate per cell (`NaN` where nothing was proposed).
    pub fn acceptance_rates(&self) -> DMatrix<f64> {
        self.total_accept.zip_map(&self.total_proposed, |a, p| {
            if p == 0 {
                f64::NAN
            } else {
                a as f64 / p as f64
            }
        })
    }

    /// Close out a sweep: at the end of a batch, move each cell's log step
    /// toward the target acceptance rate.
    fn end_sweep(&mut self, adapt: bool) {
        if !adapt {
            return;
        }
        self.in_batch += 1;
        if self.in_batch < self.batch_size {
            return;
        }
        let delta = T::lit(self.increment());
        let cutoff = self.target * self.batch_size as f64;
        for (step, count) in self.log_step.iter_mut().zip(self.accept_count.iter_mut()) {
            if (*count as f64) > cutoff {
                *step += delta;
            } else {
                *step -= delta;
            }
            *count = 0;
        }
        self.in_batch = 0;
        self.batch += 1;
    }
}

/// Log target of one latent cell up to a constant:
/// `y z - e^z - (z - m)² / (2σ²)`.
pub fn latent_log_target<T: Real>(z: T, y: T, mean: T, sigma2: T) -> T {
    let d = z - mean;
    y * z - z.exp() - d * d / (T::lit(2.0) * sigma2)
}

/// One Metropolis step per observed cell, exact Gaussian draws for missing
/// cells, and pinned cells held at `ln y`.
pub fn update_latent_z<T: Real, R: Rng + ?Sized>(
    state: &mut ModelState<T>,
    data: &ModelData<T>,
    mh: &mut AdaptiveMHState<T>,
    adapt: bool,
    rng: &mut R,
) {
    let mean = state.z_mean(data);
    let sigma2 = state.sigma2;
    let prec = T::one() / sigma2;
    for x in 0..data.a() {
        for i in 0..data.n() {
            let m = mean[(i, x)];
            if !data.observed[(i, x)] {
                state.z[(i, x)] = T::normal(m, sigma2, rng);
                continue;
            }
            let y_int = data.counts[(i, x)];
            if data.pinned[(i, x)] {
                state.z[(i, x)] = T::lit((y_int as f64).ln());
                continue;
            }
            let y = T::lit(y_int as f64);
            let cur = state.z[(i, x)];
            let sd = mh.log_step[(i, x)].exp() / (y + prec).sqrt();
            let prop = cur + sd * T::std_normal(rng);
            let log_ratio =
                latent_log_target(prop, y, m, sigma2) - latent_log_target(cur, y, m, sigma2);
            let u = T::open01(rng);
            mh.total_proposed[(i, x)] += 1;
            if u.ln() < log_ratio {
                state.z[(i, x)] = prop;
                mh.total_accept[(i, x)] += 1;
                if adapt {
                    mh.accept_count[(i, x)] += 1;
                }
            }
        }
    }
    mh.end_sweep(adapt);
}
