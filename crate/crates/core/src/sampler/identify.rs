use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::thin_qr_positive;
use crate::scalar::Real;

/// Output of [`apply_identification`]. `transform` is the `Q x Q` matrix `S`
/// with `B f_old = Φ S`, so loadings map as `λ_new = λ_old Sᵀ`.
#[derive(Debug, Clone)]
pub struct Identified<T: Real> {
    pub f: DMatrix<T>,
    pub lambda: DMatrix<T>,
    pub phi: DMatrix<T>,
    pub transform: DMatrix<T>,
}

/// Rotate `(f, λ)` so that `Φ = B f` has orthonormal columns, leaving
/// `Φ λᵀ` unchanged.
///
/// The thin QR factor `R` has a positive diagonal; each column of `Φ` is then
/// flipped so that its largest-magnitude entry is positive, with the flip
/// carried into `S`. Spline coefficients follow exactly as `f S⁻¹`, which
/// solves `B f = Φ`.
pub fn apply_identification<T: Real>(
    f: &DMatrix<T>,
    lambda: &DMatrix<T>,
    b: &DMatrix<T>,
) -> Result<Identified<T>> {
    let m = b * f;
    let (mut phi, mut s) = thin_qr_positive(&m)?;
    for j in 0..phi.ncols() {
        let col = phi.column(j);
        let mut best = 0;
        for x in 1..col.len() {
            if col[x].abs() > col[best].abs() {
                best = x;
            }
        }
        if col[best] < T::zero() {
            phi.column_mut(j).neg_mut();
            s.row_mut(j).neg_mut();
        }
    }
    let f_new = s
        .clone()
        .transpose()
        .solve_lower_triangular(&f.transpose())
        .map(|ft| ft.transpose())
        .ok_or(crate::error::Error::RankDeficient { factor: 0 })?;
    let lambda_new = lambda * s.transpose();
    Ok(Identified {
        f: f_new,
        lambda: lambda_new,
        phi,
        transform: s,
    })
}
