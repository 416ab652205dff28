//! Count panels, covariate matrices and their CSV formats.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Counts `y[i, x]` over `N` subpopulations and `A` ages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AgeCountPanel<T: Real> {
    pub counts: DMatrix<u64>,
    /// Log-exposure added to the linear predictor.
    pub offsets: DMatrix<T>,
    pub observed: DMatrix<bool>,
    pub ages: Vec<i64>,
    pub subpop_ids: Vec<String>,
}

impl<T: Real> AgeCountPanel<T> {
    /// Fully observed panel with zero offsets.
    pub fn new(counts: DMatrix<u64>, ages: Vec<i64>, subpop_ids: Vec<String>) -> Result<Self> {
        let (n, a) = counts.shape();
        let panel = AgeCountPanel {
            offsets: DMatrix::zeros(n, a),
            observed: DMatrix::from_element(n, a, true),
            counts,
            ages,
            subpop_ids,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn a(&self) -> usize {
        self.counts.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, a) = self.counts.shape();
        if self.offsets.shape() != (n, a) || self.observed.shape() != (n, a) {
            return Err(Error::invalid("counts, offsets and mask must share dimensions"));
        }
        if self.ages.len() != a || self.subpop_ids.len() != n {
            return Err(Error::invalid("ages / subpop ids do not match the count matrix"));
        }
        if self.ages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("ages must be strictly increasing"));
        }
        Ok(())
    }

    pub fn subpop_index(&self, id: &str) -> Result<usize> {
        self.subpop_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSubpop(id.to_string()))
    }

    /// Total observed count per subpopulation.
    pub fn totals(&self) -> Vec<u64> {
        (0..self.n())
            .map(|i| {
                (0..self.a())
                    .filter(|&x| self.observed[(i, x)])
                    .map(|x| self.counts[(i, x)])
                    .sum()
            })
            .collect()
    }

    /// Panel restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        AgeCountPanel {
            counts: self.counts.select_rows(rows),
            offsets: self.offsets.select_rows(rows),
            observed: self.observed.select_rows(rows),
            ages: self.ages.clone(),
            subpop_ids: rows.iter().map(|&i| self.subpop_ids[i].clone()).collect(),
        }
    }

    /// `ln(1 + y)` with unobserved cells set to zero before the transform.
    pub fn log1p(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.n(), self.a(), |i, x| {
            if self.observed[(i, x)] {
                T::lit((self.counts[(i, x)] as f64).ln_1p())
            } else {
                T::zero()
            }
        })
    }
}

#[derive(Debug, Deserialize)]
struct CountRow {
    subpop: String,
    age: i64,
    count: Option<i64>,
    offset: Option<f64>,
}

/// Read `subpop,age,count[,offset]`. Cells without a row (or with an empty
/// count) are marked unobserved.
pub fn load_counts_csv<T: Real>(path: &Path) -> Result<AgeCountPanel<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.deserialize::<CountRow>().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Row {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        if let Some(c) = rec.count {
            if c < 0 {
                return Err(Error::Row {
                    path: path.to_path_buf(),
                    row,
                    message: format!("negative count {c}"),
                });
            }
        }
        rows.push((row, rec));
    }

    let mut ids: Vec<String> = Vec::new();
    let mut id_index: HashMap<String, usize> = HashMap::new();
    let mut ages = BTreeSet::new();
    for (_, r) in &rows {
        if !id_index.contains_key(&r.subpop) {
            id_index.insert(r.subpop.clone(), ids.len());
            ids.push(r.subpop.clone());
        }
        ages.insert(r.age);
    }
    let ages: Vec<i64> = ages.into_iter().collect();
    let age_index: HashMap<i64, usize> = ages.iter().enumerate().map(|(j, &a)| (a, j)).collect();
    let (n, a) = (ids.len(), ages.len());
    if n == 0 {
        return Err(Error::invalid(format!("{}: no data rows", path.display())));
    }

    let mut counts = DMatrix::<u64>::zeros(n, a);
    let mut offsets = DMatrix::<T>::zeros(n, a);
    let mut observed = DMatrix::from_element(n, a, false);
    let mut seen = DMatrix::from_element(n, a, false);
    for (row, r) in rows {
        let (i, x) = (id_index[&r.subpop], age_index[&r.age]);
        if seen[(i, x)] {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate cell ({}, {})", r.subpop, r.age),
            });
        }
        seen[(i, x)] = true;
        if let Some(o) = r.offset {
            offsets[(i, x)] = T::lit(o);
        }
        if let Some(c) = r.count {
            counts[(i, x)] = c as u64;
            observed[(i, x)] = true;
        }
    }
    let panel = AgeCountPanel {
        counts,
        offsets,
        observed,
        ages,
        subpop_ids: ids,
    };
    panel.validate()?;
    Ok(panel)
}

/// Write observed cells in the format read by [`load_counts_csv`].
pub fn write_counts_csv<T: Real>(panel: &AgeCountPanel<T>, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let with_offset = panel.offsets.iter().any(|o| *o != T::zero());
    if with_offset {
        w.write_record(["subpop", "age", "count", "offset"]).map_err(csv_err)?;
    } else {
        w.write_record(["subpop", "age", "count"]).map_err(csv_err)?;
    }
    for i in 0..panel.n() {
        for x in 0..panel.a() {
            if !panel.observed[(i, x)] {
                continue;
            }
            let mut rec = vec![
                panel.subpop_ids[i].clone(),
                panel.ages[x].to_string(),
                panel.counts[(i, x)].to_string(),
            ];
            if with_offset {
                rec.push(panel.offsets[(i, x)].to_f64().to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Drop subpopulations whose total observed count is below `min_total`.
/// Returns the filtered panel and the retained row indices, so covariates
/// can be filtered in lockstep.
pub fn filter_small_subpops<T: Real>(
    panel: &AgeCountPanel<T>,
    min_total: u64,
) -> Result<(AgeCountPanel<T>, Vec<usize>)> {
    let keep: Vec<usize> = panel
        .totals()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= min_total)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid(format!(
            "no subpopulation has at least {min_total} observed counts"
        )));
    }
    Ok((panel.select_rows(&keep), keep))
}

/// Design matrix `W` (intercept first) on the original covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CovariateMatrix<T: Real> {
    pub values: DMatrix<T>,
    pub names: Vec<String>,
    /// `(linear_col, quadratic_col)` pairs.
    pub quad_pairs: Vec<(usize, usize)>,
}

impl<T: Real> CovariateMatrix<T> {
    /// Intercept-only design for `n` rows.
    pub fn intercept_only(n: usize) -> Self {
        CovariateMatrix {
            values: DMatrix::from_element(n, 1, T::one()),
            names: vec!["intercept".into()],
            quad_pairs: Vec::new(),
        }
    }

    /// Prepend an intercept to raw columns and append the requested
    /// quadratic companions.
    pub fn from_columns(raw: DMatrix<T>, names: Vec<String>, quadratic: &[String]) -> Result<Self> {
        if raw.ncols() != names.len() {
            return Err(Error::invalid("covariate names do not match columns"));
        }
        let n = raw.nrows();
        let mut cols: Vec<DVector<T>> = vec![DVector::from_element(n, T::one())];
        let mut all_names = vec!["intercept".to_string()];
        for (j, name) in names.iter().enumerate() {
            cols.push(raw.column(j).into_owned());
            all_names.push(name.clone());
        }
        let mut quad_pairs = Vec::new();
        for q in quadratic {
            let j = all_names
                .iter()
                .position(|s| s == q)
                .filter(|&j| j > 0)
                .ok_or_else(|| Error::invalid(format!("unknown quadratic covariate `{q}`")))?;
            if quad_pairs.iter().any(|&(l, _)| l == j) {
                return Err(Error::invalid(format!("duplicate quadratic covariate `{q}`")));
            }
            let sq = cols[j].map(|v| v * v);
            quad_pairs.push((j, cols.len()));
            cols.push(sq);
            all_names.push(format!("{q}^2"));
        }
        let values = DMatrix::from_columns(&cols);
        let m = CovariateMatrix {
            values,
            names: all_names,
            quad_pairs,
        };
        m.validate(n)?;
        Ok(m)
    }

    pub fn r(&self) -> usize {
        self.values.ncols()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.values.nrows() != n {
            return Err(Error::invalid(format!(
                "covariate rows ({}) do not match panel rows ({n})",
                self.values.nrows()
            )));
        }
        if self.names.len() != self.r() {
            return Err(Error::invalid("covariate names do not match columns"));
        }
        for &(j, q) in &self.quad_pairs {
            if j == q || j >= self.r() || q >= self.r() {
                return Err(Error::invalid("quadratic pair references invalid columns"));
            }
            for i in 0..n {
                let (v, s) = (self.values[(i, j)], self.values[(i, q)]);
                if (v * v - s).abs() > T::lit(1e-9) * (T::one() + s.abs()) {
                    return Err(Error::invalid(format!(
                        "column `{}` is not the square of `{}`",
                        self.names[q], self.names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::invalid(format!("unknown covariate `{name}`")))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        CovariateMatrix {
            values: self.values.select_rows(rows),
            names: self.names.clone(),
            quad_pairs: self.quad_pairs.clone(),
        }
    }

    /// Recompute quadratic companions of a single covariate vector from its
    /// linear entries.
    pub fn complete_row(&self, row: &mut [T]) {
        for &(j, q) in &self.quad_pairs {
            row[q] = row[j] * row[j];
        }
    }

    /// Check that a covariate vector honors the quadratic pairs.
    pub fn check_row(&self, row: &[T]) -> Result<()> {
        if row.len() != self.r() {
            return Err(Error::invalid(format!(
                "covariate vector has length {}, expected {}",
                row.len(),
                self.r()
            )));
        }
        for &(j, q) in &self.quad_pairs {
            let (v, s) = (row[j], row[q]);
            if (v * v - s).abs() > T::lit(1e-9) * (T::one() + s.abs()) {
                return Err(Error::invalid(format!(
                    "`{}` must equal the square of `{}`",
                    self.names[q], self.names[j]
                )));
            }
        }
        Ok(())
    }
}

/// Read `subpop,<numeric columns...>` and align rows to `subpop_ids`.
pub fn load_covariates_csv<T: Real>(
    path: &Path,
    subpop_ids: &[String],
    quadratic: &[String],
) -> Result<CovariateMatrix<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("subpop") {
        return Err(Error::invalid(format!(
            "{}: first column must be `subpop`",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut by_id: HashMap<String, Vec<T>> = HashMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(csv_err)?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let mut vals = Vec::with_capacity(names.len());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Row {
                path: path.to_path_buf(),
                row,
                message: format!("non-numeric value `{cell}` in column `{}`", names[j]),
            })?;
            vals.push(T::lit(v));
        }
        if vals.len() != names.len() {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row,
                message: "wrong number of fields".into(),
            });
        }
        if by_id.insert(id.clone(), vals).is_some() {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate subpop `{id}`"),
            });
        }
    }
    let mut raw = DMatrix::<T>::zeros(subpop_ids.len(), names.len());
    for (i, id) in subpop_ids.iter().enumerate() {
        let vals = by_id.get(id).ok_or_else(|| {
            Error::invalid(format!("{}: no covariate row for subpop `{id}`", path.display()))
        })?;
        for (j, v) in vals.iter().enumerate() {
            raw[(i, j)] = *v;
        }
    }
    CovariateMatrix::from_columns(raw, names, quadratic)
}

/// Write `subpop,<columns>` without the intercept and quadratic companions.
pub fn write_covariates_csv<T: Real>(
    cov: &CovariateMatrix<T>,
    subpop_ids: &[String],
    path: &Path,
) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let quad_cols: Vec<usize> = cov.quad_pairs.iter().map(|&(_, q)| q).collect();
    let cols: Vec<usize> = (1..cov.r()).filter(|j| !quad_cols.contains(j)).collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["subpop".to_string()];
    header.extend(cols.iter().map(|&j| cov.names[j].clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in subpop_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(cols.iter().map(|&j| cov.values[(i, j)].to_f64().to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-column affine map `w_std = (w - center) / scale` used to condition
/// the sampler. Columns left alone carry `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Standardization<T: Real> {
    pub center: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Real> Standardization<T> {
    pub fn identity(r: usize) -> Self {
        Standardization {
            center: vec![T::zero(); r],
            scale: vec![T::one(); r],
        }
    }

    /// Standardize every column except the intercept (column 0), binary
    /// 0/1 columns and constant columns.
    pub fn fit(cov: &CovariateMatrix<T>) -> Self {
        let (n, r) = cov.values.shape();
        let mut s = Self::identity(r);
        if n < 2 {
            return s;
        }
        for j in 1..r {
            let col = cov.values.column(j);
            let binary = col.iter().all(|&v| v == T::zero() || v == T::one());
            if binary {
                continue;
            }
            let mean = col.sum() / T::from_count(n);
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b)
                / T::from_count(n - 1);
            if var > T::zero() {
                s.center[j] = mean;
                s.scale[j] = var.sqrt();
            }
        }
        s
    }

    pub fn apply_row(&self, row: &[T]) -> DVector<T> {
        DVector::from_iterator(
            row.len(),
            row.iter().enumerate().map(|(j, &v)| (v - self.center[j]) / self.scale[j]),
        )
    }

    pub fn apply(&self, values: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            (values[(i, j)] - self.center[j]) / self.scale[j]
        })
    }

    /// Map coefficients on the standardized design back to the original
    /// covariate scale. Column 0 must be the intercept.
    pub fn coefficients_to_original(&self, coef: &[T]) -> Vec<T> {
        let mut out: Vec<T> = coef.iter().zip(&self.scale).map(|(&c, &s)| c / s).collect();
        let shift = (1..coef.len()).fold(T::zero(), |acc, j| acc + out[j] * self.center[j]);
        out[0] = coef[0] - shift;
        out
    }
}
