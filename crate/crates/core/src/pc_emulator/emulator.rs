use std::fs::{self, File};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{project_rows, EnsembleDesign, PcBasis, Support};
use super::gp::{correlation_matrix, fit_component, sq_exp_corr, FitOptions, GpHyperparams};
use crate::error::{Error, Result};
use crate::field_grid::{CellIndex, GridSpec};

pub const EMULATOR_FORMAT_VERSION: u32 = 1;

/// Affine map of each parameter onto `[0, 1]` using the design's bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaScaling {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl ThetaScaling {
    pub fn from_design(thetas: &[Vec<f64>]) -> Self {
        let q = thetas[0].len();
        let mut min = vec![f64::INFINITY; q];
        let mut max = vec![f64::NEG_INFINITY; q];
        for t in thetas {
            for d in 0..q {
                min[d] = min[d].min(t[d]);
                max[d] = max[d].max(t[d]);
            }
        }
        let range = min.iter().zip(&max).map(|(a, b)| b - a).collect();
        ThetaScaling { min, range }
    }

    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(d, &t)| {
                if self.range[d] > 0.0 {
                    (t - self.min[d]) / self.range[d]
                } else {
                    t - self.min[d]
                }
            })
            .collect()
    }

    /// True when a scaled point lies outside the unit box.
    pub fn outside(&self, scaled: &[f64]) -> bool {
        scaled.iter().any(|&u| !(-1e-12..=1.0 + 1e-12).contains(&u))
    }
}

/// Per-component eigendecomposition of the design correlation matrix, so that
/// `(κ′R + ζI)⁻¹` costs O(p²) for any sill κ′.
#[derive(Clone, Debug)]
struct ComponentCache {
    q: DMatrix<f64>,
    lambda: DVector<f64>,
    qty: DVector<f64>,
}

impl ComponentCache {
    fn new(thetas: &[Vec<f64>], scores: &DVector<f64>, hyper: &GpHyperparams) -> Result<Self> {
        let r = correlation_matrix(thetas, &hyper.phis);
        let eig = r.symmetric_eigen();
        let lambda = eig.eigenvalues.map(|l| l.max(0.0));
        let q = eig.eigenvectors;
        let qty = q.tr_mul(scores);
        Ok(ComponentCache { q, lambda, qty })
    }
}

/// Predictive mean and (diagonal) covariance of the component scores.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    /// The query lay outside the design's bounding box.
    pub extrapolated: bool,
}

impl Prediction {
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.var)
    }
}

/// One independent GP per retained principal component.
#[derive(Clone, Debug)]
pub struct PcEmulator {
    pub parameter_names: Vec<String>,
    pub basis: PcBasis,
    pub column_means: DVector<f64>,
    pub support: Option<Support>,
    /// Design points in original units.
    pub thetas: Vec<Vec<f64>>,
    pub scaling: ThetaScaling,
    /// `p × J_y` score matrix.
    pub scores: DMatrix<f64>,
    pub hyper: Vec<GpHyperparams>,
    scaled_thetas: Vec<Vec<f64>>,
    cache: Vec<ComponentCache>,
}

impl PcEmulator {
    /// Fit every component by maximum likelihood (components in parallel).
    pub fn fit(design: &EnsembleDesign, basis: PcBasis, opts: &FitOptions) -> Result<Self> {
        let scaling = ThetaScaling::from_design(&design.thetas);
        let scaled: Vec<Vec<f64>> = design.thetas.iter().map(|t| scaling.apply(t)).collect();
        let scores = project_rows(&basis, &design.m);
        let hyper = (0..basis.n_components())
            .into_par_iter()
            .map(|j| {
                let col = scores.column(j).into_owned();
                let o = FitOptions {
                    seed: opts.seed.wrapping_add(j as u64 * 0x9E37_79B9),
                    ..opts.clone()
                };
                fit_component(&scaled, &col, &o)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(design, basis, hyper)
    }

    /// Build an emulator from given hyperparameters (one set per component).
    pub fn with_hyperparams(
        design: &EnsembleDesign,
        basis: PcBasis,
        hyper: Vec<GpHyperparams>,
    ) -> Result<Self> {
        Self::assemble(design, basis, hyper)
    }

    fn assemble(design: &EnsembleDesign, basis: PcBasis, hyper: Vec<GpHyperparams>) -> Result<Self> {
        let scaling = ThetaScaling::from_design(&design.thetas);
        let scores = project_rows(&basis, &design.m);
        Self::from_parts(
            design.parameter_names.clone(),
            basis,
            design.column_means.clone(),
            design.support.clone(),
            design.thetas.clone(),
            scaling,
            scores,
            hyper,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        parameter_names: Vec<String>,
        basis: PcBasis,
        column_means: DVector<f64>,
        support: Option<Support>,
        thetas: Vec<Vec<f64>>,
        scaling: ThetaScaling,
        scores: DMatrix<f64>,
        hyper: Vec<GpHyperparams>,
    ) -> Result<Self> {
        if hyper.len() != basis.n_components() {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter sets",
                expected: basis.n_components(),
                got: hyper.len(),
            });
        }
        for h in &hyper {
            h.validate()?;
            if h.phis.len() != parameter_names.len() {
                return Err(Error::DimensionMismatch {
                    context: "range parameters",
                    expected: parameter_names.len(),
                    got: h.phis.len(),
                });
            }
        }
        let scaled_thetas: Vec<Vec<f64>> = thetas.iter().map(|t| scaling.apply(t)).collect();
        let cache = hyper
            .iter()
            .enumerate()
            .map(|(j, h)| ComponentCache::new(&scaled_thetas, &scores.column(j).into_owned(), h))
            .collect::<Result<Vec<_>>>()?;
        Ok(PcEmulator {
            parameter_names,
            basis,
            column_means,
            support,
            thetas,
            scaling,
            scores,
            hyper,
            scaled_thetas,
            cache,
        })
    }

    pub fn n_components(&self) -> usize {
        self.basis.n_components()
    }

    pub fn n_design(&self) -> usize {
        self.thetas.len()
    }

    /// Fitted partial sills.
    pub fn sills(&self) -> Vec<f64> {
        self.hyper.iter().map(|h| h.kappa).collect()
    }

    /// Predictive distribution of the component scores at `theta_star`.
    ///
    /// For component `j` with sill `κ` (or its override), nugget `ζ` and
    /// correlations `r` between `theta_star` and the design:
    /// `μ = κ rᵀ(κR + ζI)⁻¹ y` and `var = κ + ζ − κ² rᵀ(κR + ζI)⁻¹ r`.
    pub fn predict(&self, theta_star: &[f64], sill_overrides: Option<&[f64]>) -> Result<Prediction> {
        let q = self.parameter_names.len();
        if theta_star.len() != q {
            return Err(Error::DimensionMismatch {
                context: "predict theta",
                expected: q,
                got: theta_star.len(),
            });
        }
        let jn = self.n_components();
        if let Some(s) = sill_overrides {
            if s.len() != jn {
                return Err(Error::DimensionMismatch {
                    context: "sill overrides",
                    expected: jn,
                    got: s.len(),
                });
            }
        }
        let u = self.scaling.apply(theta_star);
        let extrapolated = self.scaling.outside(&u);
        let p = self.n_design();
        let mut mean = DVector::zeros(jn);
        let mut var = DVector::zeros(jn);
        let mut r = DVector::zeros(p);
        for j in 0..jn {
            let h = &self.hyper[j];
            let kappa = sill_overrides.map_or(h.kappa, |s| s[j]);
            for i in 0..p {
                r[i] = sq_exp_corr(&u, &self.scaled_thetas[i], &h.phis);
            }
            let c = &self.cache[j];
            let qtr = c.q.tr_mul(&r);
            let (mut m, mut quad) = (0.0, 0.0);
            for k in 0..p {
                let d = kappa * c.lambda[k] + h.zeta;
                if d <= 0.0 {
                    return Err(Error::SingularCovariance { component: j });
                }
                m += qtr[k] * c.qty[k] / d;
                quad += qtr[k] * qtr[k] / d;
            }
            mean[j] = kappa * m;
            let v = kappa + h.zeta - kappa * kappa * quad;
            if v < 0.0 {
                if v < -1e-10 * (kappa + h.zeta) {
                    log::warn!("component {j}: negative predictive variance {v:e} clamped to 0");
                }
                var[j] = 0.0;
            } else {
                var[j] = v;
            }
        }
        Ok(Prediction {
            mean,
            var,
            extrapolated,
        })
    }

    /// Emulated field at `theta_star`: `K_y μ + column_means`.
    pub fn predict_field(&self, theta_star: &[f64]) -> Result<DVector<f64>> {
        let pred = self.predict(theta_star, None)?;
        Ok(&self.basis.k_y * pred.mean + &self.column_means)
    }

    // -----------------------------------------------------------------------
    // persistence

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = EmulatorManifest {
            format_version: EMULATOR_FORMAT_VERSION,
            parameter_names: self.parameter_names.clone(),
            n_locations: self.basis.n_locations(),
            n_design: self.n_design(),
            n_components: self.n_components(),
            eigenvalues: self.basis.eigenvalues.clone(),
            explained_fraction: self.basis.explained_fraction,
            total_variance: self.basis.total_variance,
            scaling: self.scaling.clone(),
            hyperparams: self.hyper.clone(),
            grid: self.support.as_ref().map(|s| (*s.spec).clone()),
        };
        let path = dir.join("manifest.json");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(f, &manifest)?;

        let jn = self.n_components();
        let q = self.parameter_names.len();
        let mut header: Vec<String> = vec!["mean".into()];
        header.extend((1..=jn).map(|j| format!("k{j}")));
        let mut rows = Vec::with_capacity(self.basis.n_locations());
        for i in 0..self.basis.n_locations() {
            let mut row = vec![self.column_means[i]];
            row.extend((0..jn).map(|j| self.basis.k_y[(i, j)]));
            rows.push(row);
        }
        write_matrix_csv(&dir.join("basis.csv"), &header, &rows)?;

        let mut header: Vec<String> = self.parameter_names.iter().map(|n| format!("theta.{n}")).collect();
        header.extend((1..=jn).map(|j| format!("score{j}")));
        let rows: Vec<Vec<f64>> = (0..self.n_design())
            .map(|i| {
                let mut row = self.thetas[i].clone();
                row.extend((0..jn).map(|j| self.scores[(i, j)]));
                row
            })
            .collect();
        debug_assert_eq!(header.len(), q + jn);
        write_matrix_csv(&dir.join("design.csv"), &header, &rows)?;

        if let Some(s) = &self.support {
            let header: Vec<String> = ["lon_idx", "lat_idx", "depth_idx"].map(String::from).to_vec();
            let rows: Vec<Vec<f64>> = s
                .locations
                .iter()
                .map(|c| vec![c.lon as f64, c.lat as f64, c.depth as f64])
                .collect();
            write_matrix_csv(&dir.join("support.csv"), &header, &rows)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let m: EmulatorManifest = serde_json::from_reader(f)?;
        if m.format_version != EMULATOR_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "emulator format version {} is not supported (expected {})",
                m.format_version, EMULATOR_FORMAT_VERSION
            )));
        }
        let jn = m.n_components;
        let q = m.parameter_names.len();
        let basis_rows = read_matrix_csv(&dir.join("basis.csv"), 1 + jn)?;
        if basis_rows.len() != m.n_locations {
            return Err(Error::DimensionMismatch {
                context: "basis.csv rows",
                expected: m.n_locations,
                got: basis_rows.len(),
            });
        }
        let column_means = DVector::from_iterator(m.n_locations, basis_rows.iter().map(|r| r[0]));
        let k_y = DMatrix::from_fn(m.n_locations, jn, |i, j| basis_rows[i][1 + j]);
        let design_rows = read_matrix_csv(&dir.join("design.csv"), q + jn)?;
        if design_rows.len() != m.n_design {
            return Err(Error::DimensionMismatch {
                context: "design.csv rows",
                expected: m.n_design,
                got: design_rows.len(),
            });
        }
        let thetas: Vec<Vec<f64>> = design_rows.iter().map(|r| r[..q].to_vec()).collect();
        let scores = DMatrix::from_fn(m.n_design, jn, |i, j| design_rows[i][q + j]);
        let support = match m.grid {
            Some(spec) => {
                let rows = read_matrix_csv(&dir.join("support.csv"), 3)?;
                Some(Support {
                    spec: Arc::new(spec),
                    locations: rows
                        .iter()
                        .map(|r| CellIndex {
                            lon: r[0] as usize,
                            lat: r[1] as usize,
                            depth: r[2] as usize,
                        })
                        .collect(),
                })
            }
            None => None,
        };
        let basis = PcBasis {
            k_y,
            eigenvalues: m.eigenvalues,
            explained_fraction: m.explained_fraction,
            total_variance: m.total_variance,
        };
        Self::from_parts(
            m.parameter_names,
            basis,
            column_means,
            support,
            thetas,
            m.scaling,
            scores,
            m.hyperparams,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmulatorManifest {
    format_version: u32,
    parameter_names: Vec<String>,
    n_locations: usize,
    n_design: usize,
    n_components: usize,
    eigenvalues: Vec<f64>,
    explained_fraction: f64,
    total_variance: f64,
    scaling: ThetaScaling,
    hyperparams: Vec<GpHyperparams>,
    grid: Option<GridSpec>,
}

pub(crate) fn write_matrix_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn read_matrix_csv(path: &Path, ncols: usize) -> Result<Vec<Vec<f64>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != ncols {
            return Err(Error::DimensionMismatch {
                context: "csv columns",
                expected: ncols,
                got: rec.len(),
            });
        }
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("{}: cannot parse `{s}` as a number", path.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}
