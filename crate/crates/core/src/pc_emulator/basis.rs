use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::{vectorize, CellIndex, GridField, GridSpec};
use crate::linalg::{count_for_fraction, SortedSvd};

/// Grid plus the ordered list of locations a vector lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub spec: Arc<GridSpec>,
    pub locations: Vec<CellIndex>,
}

impl Support {
    pub fn coordinates(&self) -> Vec<[f64; 3]> {
        self.locations.iter().map(|&c| self.spec.coordinates(c)).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Support {
        Support {
            spec: self.spec.clone(),
            locations: indices.iter().map(|&i| self.locations[i]).collect(),
        }
    }
}

/// Subtract column means; returns the centred matrix and the means.
pub fn center_columns(m_raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m_raw.nrows() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 ensemble members, got {}",
            m_raw.nrows()
        )));
    }
    let p = m_raw.nrows() as f64;
    let means = DVector::from_iterator(
        m_raw.ncols(),
        m_raw.column_iter().map(|c| c.sum() / p),
    );
    let mut m = m_raw.clone();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    Ok((m, means))
}

/// Parameter settings, centred output matrix (`p × n`) and its column means.
#[derive(Clone, Debug)]
pub struct EnsembleDesign {
    pub parameter_names: Vec<String>,
    pub thetas: Vec<Vec<f64>>,
    pub m: DMatrix<f64>,
    pub column_means: DVector<f64>,
    pub support: Option<Support>,
}

impl EnsembleDesign {
    pub fn from_raw(
        parameter_names: Vec<String>,
        thetas: Vec<Vec<f64>>,
        m_raw: &DMatrix<f64>,
    ) -> Result<Self> {
        if thetas.len() != m_raw.nrows() {
            return Err(Error::DimensionMismatch {
                context: "design rows",
                expected: m_raw.nrows(),
                got: thetas.len(),
            });
        }
        let q = parameter_names.len();
        if let Some(bad) = thetas.iter().find(|t| t.len() != q) {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: q,
                got: bad.len(),
            });
        }
        for i in 0..thetas.len() {
            for j in 0..i {
                if thetas[i] == thetas[j] {
                    return Err(Error::InvalidInput(format!(
                        "design points {j} and {i} coincide"
                    )));
                }
            }
        }
        let (m, column_means) = center_columns(m_raw)?;
        Ok(EnsembleDesign {
            parameter_names,
            thetas,
            m,
            column_means,
            support: None,
        })
    }

    /// Vectorise each run's field (all on one mask) into the rows of `M`.
    pub fn from_fields(
        parameter_names: Vec<String>,
        thetas: Vec<Vec<f64>>,
        fields: &[GridField],
    ) -> Result<Self> {
        let first = fields.first().ok_or(Error::EmptyDomain)?;
        let v0 = vectorize(first)?;
        let n = v0.len();
        let mut m_raw = DMatrix::zeros(fields.len(), n);
        for (i, f) in fields.iter().enumerate() {
            if !f.same_support(first) {
                return Err(Error::InvalidInput(format!(
                    "run {i} is not on the same grid and mask as run 0"
                )));
            }
            let v = vectorize(f)?;
            for (j, x) in v.values.iter().enumerate() {
                m_raw[(i, j)] = *x;
            }
        }
        let mut d = Self::from_raw(parameter_names, thetas, &m_raw)?;
        d.support = Some(Support {
            spec: v0.spec.clone(),
            locations: v0.locations,
        });
        Ok(d)
    }

    pub fn n_design(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.m.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.parameter_names.len()
    }

    /// Raw (uncentred) output of run `i`.
    pub fn run_output(&self, i: usize) -> DVector<f64> {
        self.m.row(i).transpose() + &self.column_means
    }

    /// Design restricted to the given runs, re-centred.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let raw = DMatrix::from_fn(rows.len(), self.n_locations(), |i, j| {
            self.m[(rows[i], j)] + self.column_means[j]
        });
        let mut d = Self::from_raw(
            self.parameter_names.clone(),
            rows.iter().map(|&i| self.thetas[i].clone()).collect(),
            &raw,
        )?;
        d.support = self.support.clone();
        Ok(d)
    }

    /// Design restricted to a subset of locations (columns).
    pub fn select_locations(&self, cols: &[usize]) -> Result<Self> {
        let raw = DMatrix::from_fn(self.n_design(), cols.len(), |i, j| {
            self.m[(i, cols[j])] + self.column_means[cols[j]]
        });
        let mut d = Self::from_raw(self.parameter_names.clone(), self.thetas.clone(), &raw)?;
        d.support = self.support.as_ref().map(|s| s.select(cols));
        Ok(d)
    }

    /// Index of the run whose parameters equal `theta` (within `tol`).
    pub fn find_run(&self, theta: &[f64], tol: f64) -> Option<usize> {
        self.thetas.iter().position(|t| {
            t.len() == theta.len() && t.iter().zip(theta).all(|(a, b)| (a - b).abs() <= tol)
        })
    }
}

/// How many principal components to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BasisSize {
    /// Smallest count whose explained share reaches the fraction.
    Fraction(f64),
    Count(usize),
}

/// Scaled eigenvectors `k_j = sqrt(λ_j) e_j` of the ensemble covariance.
#[derive(Clone, Debug)]
pub struct PcBasis {
    /// `n × J_y`.
    pub k_y: DMatrix<f64>,
    /// Descending, all positive.
    pub eigenvalues: Vec<f64>,
    /// Share of the total variance carried by the kept components.
    pub explained_fraction: f64,
    /// Sum of all nonzero eigenvalues.
    pub total_variance: f64,
}

impl PcBasis {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_locations(&self) -> usize {
        self.k_y.nrows()
    }

    /// Unit-norm eigenvectors.
    pub fn eigenvectors(&self) -> DMatrix<f64> {
        let mut e = self.k_y.clone();
        for (j, mut c) in e.column_iter_mut().enumerate() {
            c /= self.eigenvalues[j].sqrt();
        }
        e
    }

    pub fn select_locations(&self, cols: &[usize]) -> PcBasis {
        PcBasis {
            k_y: self.k_y.select_rows(cols),
            ..self.clone()
        }
    }
}

/// Principal-component basis of a centred `p × n` ensemble matrix.
///
/// The eigenvalues are those of the sample covariance `MᵀM / (p − 1)`, so the
/// projected scores of the ensemble rows have unit sample variance.
pub fn build_basis(m: &DMatrix<f64>, size: BasisSize) -> Result<PcBasis> {
    let p = m.nrows();
    if p < 2 {
        return Err(Error::InvalidInput("need at least 2 ensemble members".into()));
    }
    let svd = SortedSvd::new(m);
    let rank = svd.rank(m.nrows(), m.ncols());
    let denom = (p - 1) as f64;
    let all: Vec<f64> = svd
        .singular_values
        .iter()
        .take(rank)
        .map(|s| s * s / denom)
        .collect();
    let j = match size {
        BasisSize::Count(j) => {
            if j == 0 {
                return Err(Error::InvalidInput("component count must be ≥ 1".into()));
            }
            if j > rank {
                return Err(Error::RankDeficient { rank, requested: j });
            }
            j
        }
        BasisSize::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "variance fraction {f} outside (0, 1]"
                )));
            }
            if rank == 0 {
                return Err(Error::RankDeficient { rank, requested: 1 });
            }
            count_for_fraction(&all, f).max(1)
        }
    };
    let total: f64 = all.iter().sum();
    let eigenvalues = all[..j].to_vec();
    let k_y = DMatrix::from_fn(m.ncols(), j, |i, c| svd.v_t[(c, i)] * eigenvalues[c].sqrt());
    Ok(PcBasis {
        k_y,
        explained_fraction: eigenvalues.iter().sum::<f64>() / total,
        total_variance: total,
        eigenvalues,
    })
}

/// Least-squares coordinates of a centred vector: `(K_yᵀK_y)⁻¹K_yᵀ y`,
/// which reduces to `diag(1/λ) K_yᵀ y` by orthogonality.
pub fn project(basis: &PcBasis, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != basis.n_locations() {
        return Err(Error::DimensionMismatch {
            context: "project",
            expected: basis.n_locations(),
            got: y.len(),
        });
    }
    let mut s = basis.k_y.tr_mul(y);
    for (j, v) in s.iter_mut().enumerate() {
        *v /= basis.eigenvalues[j];
    }
    Ok(s)
}

/// Scores of every ensemble row, `p × J_y`.
pub fn project_rows(basis: &PcBasis, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m * &basis.k_y;
    for (j, mut c) in s.column_iter_mut().enumerate() {
        c /= basis.eigenvalues[j];
    }
    s
}

/// `K_y · scores + column_means`.
pub fn reconstruct(
    basis: &PcBasis,
    scores: &DVector<f64>,
    column_means: &DVector<f64>,
) -> Result<DVector<f64>> {
    if scores.len() != basis.n_components() {
        return Err(Error::DimensionMismatch {
            context: "reconstruct scores",
            expected: basis.n_components(),
            got: scores.len(),
        });
    }
    if column_means.len() != basis.n_locations() {
        return Err(Error::DimensionMismatch {
            context: "reconstruct means",
            expected: basis.n_locations(),
            got: column_means.len(),
        });
    }
    Ok(&basis.k_y * scores + column_means)
}

/// Covariance between the unscaled component coefficients `e_iᵀY(·, θ₁)` and
/// `e_jᵀY(·, θ₂)` induced by a space–parameter covariance function.
pub fn induced_component_covariance(
    cov: impl Fn(&[f64; 3], &[f64; 3], &[f64], &[f64]) -> f64,
    coords: &[[f64; 3]],
    eigenvectors: &DMatrix<f64>,
    theta1: &[f64],
    theta2: &[f64],
) -> DMatrix<f64> {
    let n = coords.len();
    let c = DMatrix::from_fn(n, n, |a, b| cov(&coords[a], &coords[b], theta1, theta2));
    eigenvectors.transpose() * c * eigenvectors
}
