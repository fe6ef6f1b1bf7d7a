use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::{vectorize, vertical_mean, zonal_mean, CellIndex, EnsembleManifest, GridField};
use crate::pc_emulator::{EnsembleDesign, Support};

/// Simulator runs on one grid and mask.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub parameter_names: Vec<String>,
    pub thetas: Vec<Vec<f64>>,
    pub fields: Vec<GridField>,
}

impl Ensemble {
    pub fn new(parameter_names: Vec<String>, thetas: Vec<Vec<f64>>, fields: Vec<GridField>) -> Result<Self> {
        if thetas.len() != fields.len() {
            return Err(Error::DimensionMismatch {
                context: "ensemble runs",
                expected: thetas.len(),
                got: fields.len(),
            });
        }
        let first = fields.first().ok_or(Error::EmptyDomain)?;
        if let Some(i) = fields.iter().position(|f| !f.same_support(first)) {
            return Err(Error::InvalidInput(format!(
                "run {i} is not on the same grid and mask as run 0"
            )));
        }
        if let Some(t) = thetas.iter().find(|t| t.len() != parameter_names.len()) {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: parameter_names.len(),
                got: t.len(),
            });
        }
        Ok(Ensemble {
            parameter_names,
            thetas,
            fields,
        })
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let m = EnsembleManifest::read(path)?;
        let fields = m.load_fields(path)?;
        let thetas = m.runs.iter().map(|r| r.theta.clone()).collect();
        Self::new(m.parameters, thetas, fields)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn find_run(&self, theta: &[f64], tol: f64) -> Option<usize> {
        self.thetas.iter().position(|t| {
            t.len() == theta.len() && t.iter().zip(theta).all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    pub fn aggregate(&self, level: Level) -> Result<Ensemble> {
        let fields = self
            .fields
            .iter()
            .map(|f| aggregate(f, level))
            .collect::<Result<Vec<_>>>()?;
        // share one grid allocation across runs
        let spec = fields[0].spec().clone();
        let fields = fields
            .into_iter()
            .map(|f| GridField::new(spec.clone(), f.values().to_vec(), f.mask().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(self.parameter_names.clone(), self.thetas.clone(), fields)
    }

    pub fn design(&self) -> Result<EnsembleDesign> {
        EnsembleDesign::from_fields(self.parameter_names.clone(), self.thetas.clone(), &self.fields)
    }
}

/// Spatial aggregation applied before emulation and calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    /// Full lon × lat × depth field.
    #[serde(rename = "3d")]
    ThreeD,
    /// Zonal mean (lat × depth).
    #[serde(rename = "2d")]
    TwoD,
    /// Horizontal mean per depth.
    #[serde(rename = "1d")]
    OneD,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::ThreeD, Level::TwoD, Level::OneD];

    pub fn as_str(&self) -> &'static str {
        match self {
            Level::ThreeD => "3d",
            Level::TwoD => "2d",
            Level::OneD => "1d",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        match s.trim().to_ascii_lowercase().as_str() {
            "3d" | "3-d" => Some(Level::ThreeD),
            "2d" | "2-d" => Some(Level::TwoD),
            "1d" | "1-d" => Some(Level::OneD),
            _ => None,
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn aggregate(field: &GridField, level: Level) -> Result<GridField> {
    match level {
        Level::ThreeD => Ok(field.clone()),
        Level::TwoD => zonal_mean(field),
        Level::OneD => vertical_mean(field),
    }
}

/// Values of `field` at the support's locations, in the support's order.
pub fn values_on_support(field: &GridField, support: &Support) -> Result<DVector<f64>> {
    if *field.spec().as_ref() != *support.spec.as_ref() {
        return Err(Error::InvalidInput(
            "observation is on a different grid from the ensemble".to_string(),
        ));
    }
    let v = vectorize(field)?;
    let pos: HashMap<CellIndex, usize> = v.locations.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut out = DVector::zeros(support.locations.len());
    for (i, c) in support.locations.iter().enumerate() {
        let k = pos.get(c).ok_or_else(|| {
            Error::InvalidInput(format!(
                "observation is masked at ensemble location ({}, {}, {})",
                c.lon, c.lat, c.depth
            ))
        })?;
        out[i] = v.values[*k];
    }
    Ok(out)
}

/// Synthetic-truth construction: the run at `truth_theta` plus the average,
/// over `residual_source_thetas`, of the residual `obs − run(θ_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoObsConfig {
    pub truth_theta: Vec<f64>,
    pub residual_source_thetas: Vec<Vec<f64>>,
}

/// Tolerance used when matching parameter settings to ensemble runs.
pub const RUN_MATCH_TOL: f64 = 1e-9;

pub fn make_pseudo_obs(ens: &Ensemble, obs: &GridField, cfg: &PseudoObsConfig) -> Result<GridField> {
    if cfg.residual_source_thetas.is_empty() {
        return Err(Error::InvalidInput("at least one residual source run is needed".to_string()));
    }
    let find = |t: &Vec<f64>| {
        ens.find_run(t, RUN_MATCH_TOL)
            .ok_or_else(|| Error::MissingRun(t.clone()))
    };
    let truth = &ens.fields[find(&cfg.truth_theta)?];
    let sources = cfg
        .residual_source_thetas
        .iter()
        .map(find)
        .collect::<Result<Vec<_>>>()?;
    if !obs.same_support(truth) {
        return Err(Error::InvalidInput(
            "observation must share the ensemble's grid and mask".to_string(),
        ));
    }
    let k = sources.len() as f64;
    let mut mean_resid = obs.zip_with(truth, |_, _| 0.0)?;
    for &i in &sources {
        let r = obs.zip_with(&ens.fields[i], |o, m| o - m)?;
        mean_resid = mean_resid.zip_with(&r, |a, b| a + b)?;
    }
    let out = truth.zip_with(&mean_resid, |t, r| t + r / k)?;
    // keep the ensemble's grid allocation
    GridField::new(truth.spec().clone(), out.values().to_vec(), out.mask().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_grid::GridSpec;
    use std::sync::Arc;

    fn three_cell_ensemble() -> (Ensemble, GridField) {
        let spec = Arc::new(GridSpec::uniform(vec![0.0, 1.0, 2.0], vec![0.0], vec![10.0]).unwrap());
        let f = |v: [f64; 3]| GridField::dense(spec.clone(), v.to_vec()).unwrap();
        let ens = Ensemble::new(
            vec!["k".into()],
            vec![vec![0.1], vec![0.2], vec![0.3]],
            vec![f([1.0, 2.0, 3.0]), f([2.0, 2.0, 2.0]), f([4.0, 0.0, 1.0])],
        )
        .unwrap();
        (ens, f([3.0, 3.0, 3.0]))
    }

    #[test]
    fn zero_residual_returns_truth() {
        let (ens, _) = three_cell_ensemble();
        let obs = ens.fields[1].clone();
        let cfg = PseudoObsConfig {
            truth_theta: vec![0.2],
            residual_source_thetas: vec![vec![0.2]],
        };
        let p = make_pseudo_obs(&ens, &obs, &cfg).unwrap();
        assert_eq!(p.values(), ens.fields[1].values());
    }

    #[test]
    fn two_run_residual_average() {
        let (ens, obs) = three_cell_ensemble();
        let cfg = PseudoObsConfig {
            truth_theta: vec![0.2],
            residual_source_thetas: vec![vec![0.1], vec![0.3]],
        };
        let p = make_pseudo_obs(&ens, &obs, &cfg).unwrap();
        // residuals (2,1,0) and (-1,3,2); mean (0.5,2,1); truth (2,2,2)
        assert_eq!(p.values(), &[2.5, 4.0, 3.0]);
    }

    #[test]
    fn missing_run_is_an_error() {
        let (ens, obs) = three_cell_ensemble();
        let cfg = PseudoObsConfig {
            truth_theta: vec![0.25],
            residual_source_thetas: vec![vec![0.1]],
        };
        assert!(matches!(make_pseudo_obs(&ens, &obs, &cfg), Err(Error::MissingRun(_))));
    }

    #[test]
    fn level_names_roundtrip() {
        for l in Level::ALL {
            assert_eq!(Level::parse(l.as_str()), Some(l));
        }
        assert_eq!(Level::parse("4d"), None);
    }
}
