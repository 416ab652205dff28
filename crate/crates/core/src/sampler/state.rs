use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sorted_svd;
use crate::sampler::identify::apply_identification;
use crate::sampler::ModelData;
use crate::scalar::Real;

/// Horseshoe auxiliaries for an `R x C` coefficient matrix: column `c` has
/// prior variances `xi[c] * rho[(r, c)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Horseshoe<T: Real> {
    pub rho: DMatrix<T>,
    pub xi: DVector<T>,
    pub nu: DMatrix<T>,
    pub zeta: DVector<T>,
}

impl<T: Real> Horseshoe<T> {
    pub fn ones(r: usize, c: usize) -> Self {
        Horseshoe {
            rho: DMatrix::from_element(r, c, T::one()),
            xi: DVector::from_element(c, T::one()),
            nu: DMatrix::from_element(r, c, T::one()),
            zeta: DVector::from_element(c, T::one()),
        }
    }

    /// Diagonal prior precision for column `c`.
    pub fn prior_precision(&self, c: usize) -> DVector<T> {
        self.rho.column(c).map(|rho| T::one() / (self.xi[c] * rho))
    }
}

/// One complete set of parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelState<T: Real> {
    /// Latent log-means, `N x A`. Empty in stored draws unless requested.
    pub z: DMatrix<T>,
    pub alpha: DVector<T>,
    /// Spline coefficients, `K x Q`.
    pub f: DMatrix<T>,
    /// Factor curves `B f`, `A x Q`.
    pub phi: DMatrix<T>,
    pub lambda: DMatrix<T>,
    pub gamma: DMatrix<T>,
    /// `R x Q`, column `q` is `β_q`.
    pub beta: DMatrix<T>,
    pub delta: DVector<T>,
    pub sigma2: T,
    pub sigma2_alpha: T,
    pub sigma2_lambda: DVector<T>,
    pub tau: DVector<T>,
    /// `(K-2) x Q` local smoothing weights.
    pub kappa: DMatrix<T>,
    pub hs_beta: Horseshoe<T>,
    pub hs_delta: Horseshoe<T>,
}

impl<T: Real> ModelState<T> {
    pub fn q(&self) -> usize {
        self.f.ncols()
    }

    /// `Φ λᵀ` laid out as `N x A`.
    pub fn factor_fit(&self) -> DMatrix<T> {
        &self.lambda * self.phi.transpose()
    }

    /// Systematic signal `α_i + Σ_q Φ_q(x) λ_{i,q}` (no offsets), `N x A`.
    pub fn signal(&self) -> DMatrix<T> {
        let mut s = self.factor_fit();
        for (i, mut row) in s.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.alpha[i]);
        }
        s
    }

    /// Mean of `z` given everything else: signal plus offsets.
    pub fn z_mean(&self, data: &ModelData<T>) -> DMatrix<T> {
        self.signal() + &data.offsets
    }

    /// Warm start: `z = ln(y + 0.5)`, `α` the row means, factors from the
    /// SVD of the demeaned `z` projected onto the spline space, loadings by
    /// projection, regressions by ridge, all variances at one.
    pub fn initialize(data: &ModelData<T>) -> Result<Self> {
        let (n, a) = (data.n(), data.a());
        let q = data.q;
        let k = data.basis.k();
        let r = data.r();
        // Net-of-offset log counts; missing cells take the row mean.
        let mut z_net = DMatrix::<T>::zeros(n, a);
        for i in 0..n {
            let mut sum = T::zero();
            let mut cnt = 0usize;
            for x in 0..a {
                if data.observed[(i, x)] {
                    let y = data.counts[(i, x)] as f64;
                    let full = if data.pinned[(i, x)] { y.ln() } else { (y + 0.5).ln() };
                    z_net[(i, x)] = T::lit(full) - data.offsets[(i, x)];
                    sum += z_net[(i, x)];
                    cnt += 1;
                }
            }
            let fill = if cnt > 0 { sum / T::from_count(cnt) } else { T::lit(0.5f64.ln()) };
            for x in 0..a {
                if !data.observed[(i, x)] {
                    z_net[(i, x)] = fill;
                }
            }
        }
        let z = &z_net + &data.offsets;

        let alpha = DVector::from_fn(n, |i, _| z_net.row(i).mean());
        let mut centered = z_net.clone();
        for i in 0..n {
            centered.row_mut(i).add_scalar_mut(-alpha[i]);
        }
        let (_, _, v) = sorted_svd(&centered);
        let btb = &data.btb;
        let ridge = btb + DMatrix::identity(k, k) * T::lit(1e-6);
        let chol = ridge
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("initialization"))?;
        let mut f = DMatrix::<T>::zeros(k, q);
        for j in 0..q {
            let target = if j < v.ncols() {
                v.column(j).into_owned()
            } else {
                DVector::from_fn(a, |x, _| T::from_count((x * (j + 1)) % 7))
            };
            let rhs: DVector<T> = data.basis.b.transpose() * target;
            f.set_column(j, &chol.solve(&rhs));
        }
        let lambda0 = DMatrix::<T>::zeros(n, q);
        let ident = apply_identification(&f, &lambda0, &data.basis.b)?;
        let phi = ident.phi;
        let f = ident.f;
        let lambda = &centered * &phi;

        let w = &data.w;
        let wridge = &data.wtw + DMatrix::identity(r, r) * T::lit(1e-6);
        let wchol = wridge
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("initialization"))?;
        let delta = wchol.solve(&(w.transpose() * &alpha));
        let beta = wchol.solve(&(w.transpose() * &lambda));
        let gamma = &lambda - w * &beta;

        Ok(ModelState {
            z,
            alpha,
            f,
            phi,
            lambda,
            gamma,
            beta,
            delta,
            sigma2: T::one(),
            sigma2_alpha: T::one(),
            sigma2_lambda: DVector::from_element(q, T::one()),
            tau: DVector::from_element(q, T::one()),
            kappa: DMatrix::from_element(k - 2, q, T::one()),
            hs_beta: Horseshoe::ones(r, q),
            hs_delta: Horseshoe::ones(r, 1),
        })
    }

    /// Rotate to orthonormal factors in place (fit preserving).
    pub fn identify(&mut self, data: &ModelData<T>) -> Result<()> {
        let id = apply_identification(&self.f, &self.lambda, &data.basis.b)?;
        let st = id.transform.transpose();
        self.beta = &self.beta * &st;
        self.gamma = &self.gamma * &st;
        self.f = id.f;
        self.phi = id.phi;
        self.lambda = id.lambda;
        Ok(())
    }

    /// Copy for storage: identified, and without `z` unless asked for.
    pub fn stored_copy(&self, data: &ModelData<T>, keep_latent: bool, rotate: bool) -> Result<Self> {
        let mut s = self.clone();
        if rotate {
            s.identify(data)?;
        }
        if !keep_latent {
            s.z = DMatrix::zeros(0, 0);
        }
        Ok(s)
    }
}
