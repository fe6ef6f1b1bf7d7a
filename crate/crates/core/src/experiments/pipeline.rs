use std::fs::{self, File};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ensemble::{values_on_support, Ensemble, Level};
use crate::calibrator::{
    mcse_batch_means, posterior_density, reduce_observation, run_mcmc, CalibrationPosterior, Density,
    InvGamma, McmcConfig, PriorSpec, ReducedObservation, SplitHalfSummary,
};
use crate::discrepancy::{make_knot_grid, BasisScaling, DiscrepancyBasis, TruncationSize};
use crate::error::{Error, Result};
use crate::field_grid::GridField;
use crate::pc_emulator::{build_basis, BasisSize, EnsembleDesign, FitOptions, PcEmulator, Support};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySettings {
    pub lat_step: f64,
    pub lon_step: f64,
    pub depth_step: f64,
    pub phi_surface_km: f64,
    pub phi_depth_m: f64,
    pub size: TruncationSize,
    pub scaling: BasisScaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSettings {
    pub basis: BasisSize,
    /// `None` calibrates without a discrepancy term.
    pub discrepancy: Option<DiscrepancySettings>,
}

/// One `(κ_d, σ²)` prior pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorChoice {
    pub label: String,
    pub kappa_d: InvGamma,
    pub sigma2: InvGamma,
}

impl PriorChoice {
    pub fn new(kappa_d: InvGamma, sigma2: InvGamma) -> Self {
        PriorChoice {
            label: format!("bnu{}_bz{}", kappa_d.scale, sigma2.scale),
            kappa_d,
            sigma2,
        }
    }

    /// The four combinations of scale 2 and 100 with shape 2.
    pub fn standard_grid() -> Vec<PriorChoice> {
        let mut out = Vec::new();
        for b_nu in [2.0, 100.0] {
            for b_z in [2.0, 100.0] {
                out.push(PriorChoice::new(
                    InvGamma { shape: 2.0, scale: b_nu },
                    InvGamma { shape: 2.0, scale: b_z },
                ));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    level: Level,
    discrepancy: bool,
}

/// Everything needed to calibrate observations at one aggregation level.
#[derive(Clone, Debug)]
pub struct LevelModel {
    pub level: Level,
    pub emulator: PcEmulator,
    pub discrepancy: Option<DiscrepancyBasis>,
    pub support: Support,
}

impl LevelModel {
    /// Aggregate the ensemble, build the basis, fit the emulator and the
    /// discrepancy basis.
    pub fn build(ens: &Ensemble, level: Level, settings: &LevelSettings, fit: &FitOptions) -> Result<Self> {
        let agg = ens.aggregate(level)?;
        let design = agg.design()?;
        Self::from_design(&design, level, settings, fit)
    }

    pub fn from_design(
        design: &EnsembleDesign,
        level: Level,
        settings: &LevelSettings,
        fit: &FitOptions,
    ) -> Result<Self> {
        let support = design
            .support
            .clone()
            .ok_or_else(|| Error::InvalidInput("ensemble design has no spatial support".to_string()))?;
        let basis = build_basis(&design.m, settings.basis)?;
        let emulator = PcEmulator::fit(design, basis, fit)?;
        let discrepancy = match &settings.discrepancy {
            None => None,
            Some(d) => {
                let knots = make_knot_grid(&support.spec, d.lat_step, d.lon_step, d.depth_step)?;
                Some(DiscrepancyBasis::build(
                    &support.coordinates(),
                    knots,
                    d.phi_surface_km,
                    d.phi_depth_m,
                    d.size,
                    d.scaling,
                )?)
            }
        };
        Ok(LevelModel {
            level,
            emulator,
            discrepancy,
            support,
        })
    }

    /// `model.json`, `emulator/` and, with a discrepancy term, `discrepancy/`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.emulator.save(dir.join("emulator"))?;
        if let Some(d) = &self.discrepancy {
            d.save(dir.join("discrepancy"))?;
        }
        let meta = ModelManifest {
            level: self.level,
            discrepancy: self.discrepancy.is_some(),
        };
        let path = dir.join("model.json");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(f, &meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelManifest = serde_json::from_reader(f)?;
        let emulator = PcEmulator::load(dir.join("emulator"))?;
        let support = emulator
            .support
            .clone()
            .ok_or_else(|| Error::InvalidInput(format!("emulator in {} has no spatial support", dir.display())))?;
        let discrepancy = if meta.discrepancy {
            let d = DiscrepancyBasis::load(dir.join("discrepancy"))?;
            if d.n_locations() != support.locations.len() {
                return Err(Error::DimensionMismatch {
                    context: "discrepancy basis rows",
                    expected: support.locations.len(),
                    got: d.n_locations(),
                });
            }
            Some(d)
        } else {
            None
        };
        Ok(LevelModel {
            level: meta.level,
            emulator,
            discrepancy,
            support,
        })
    }

    pub fn n_locations(&self) -> usize {
        self.support.locations.len()
    }

    pub fn j_y(&self) -> usize {
        self.emulator.n_components()
    }

    pub fn j_d(&self) -> usize {
        self.discrepancy.as_ref().map_or(0, |d| d.n_components())
    }

    /// Aggregate a full-resolution field to this level and read it on the
    /// model's support.
    pub fn observation_vector(&self, obs: &GridField) -> Result<DVector<f64>> {
        let agg = super::ensemble::aggregate(obs, self.level)?;
        values_on_support(&agg, &self.support)
    }

    pub fn reduce(&self, z: &DVector<f64>) -> Result<ReducedObservation> {
        reduce_observation(
            z,
            &self.emulator.basis,
            self.discrepancy.as_ref(),
            &self.emulator.column_means,
        )
    }

    pub fn priors(&self, theta_bounds: &[(f64, f64)], choice: &PriorChoice, kappa_y_shape: f64) -> Result<PriorSpec> {
        PriorSpec::new(
            theta_bounds.to_vec(),
            choice.sigma2,
            choice.kappa_d,
            kappa_y_shape,
            &self.emulator.sills(),
        )
    }

    pub fn calibrate(&self, z: &DVector<f64>, priors: &PriorSpec, mcmc: &McmcConfig) -> Result<CalibrationPosterior> {
        let zr = self.reduce(z)?;
        let mut cfg = mcmc.clone();
        if self.j_d() == 0 && cfg.fixed_kappa_d.is_none() {
            // κ_d does not enter the likelihood; keep it at its prior mode
            cfg.fixed_kappa_d = Some(priors.kappa_d.mode());
        }
        run_mcmc(&zr, &self.emulator, priors, &cfg)
    }
}

/// Posterior summary of one calibration run for a single parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub label: String,
    pub parameter: String,
    /// Mode of the kernel density estimate.
    pub mode: f64,
    pub mean: f64,
    /// Equal-tailed 95% interval of the draws.
    pub interval: (f64, f64),
    pub mcse: f64,
    pub acceptance: Vec<(String, f64)>,
    pub split_half: Vec<SplitHalfSummary>,
    #[serde(skip)]
    pub density: Option<Density>,
}

impl CalibrationSummary {
    pub fn from_posterior(
        label: impl Into<String>,
        post: &CalibrationPosterior,
        priors: &PriorSpec,
        param: usize,
    ) -> Result<Self> {
        let name = format!("theta.{}", post.parameter_names[param]);
        let draws = post.draws(&name)?;
        let density = posterior_density(post, &name, priors, None)?;
        let (mean, _) = crate::calibrator::mean_sd(&draws);
        Ok(CalibrationSummary {
            label: label.into(),
            parameter: post.parameter_names[param].clone(),
            mode: density.mode(),
            mean,
            interval: crate::calibrator::equal_tailed_interval(&draws, 0.95),
            mcse: mcse_batch_means(&draws),
            acceptance: post.acceptance_rates(),
            split_half: post.split_half(),
            density: Some(density),
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.interval.0 <= value && value <= self.interval.1
    }

    pub fn width(&self) -> f64 {
        self.interval.1 - self.interval.0
    }
}

/// Deterministic per-task seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}
