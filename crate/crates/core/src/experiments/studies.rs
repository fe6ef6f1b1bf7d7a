use std::fs::{self, File};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{Ensemble, Level};
use super::pipeline::{derive_seed, CalibrationSummary, LevelModel, LevelSettings, PriorChoice};
use crate::calibrator::{CalibrationPosterior, Density, McmcConfig, DEFAULT_KAPPA_Y_SHAPE};
use crate::error::{Error, Result};
use crate::field_grid::{subsample_indices, GridField};
use crate::pc_emulator::FitOptions;

/// Settings shared by every calibration inside a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub fit: FitOptions,
    pub theta_bounds: Vec<(f64, f64)>,
    pub kappa_y_shape: f64,
    pub mcmc: McmcConfig,
    /// Parameter whose posterior is summarised.
    pub target: usize,
}

impl CalibrationSettings {
    pub fn new(theta_bounds: Vec<(f64, f64)>, mcmc: McmcConfig) -> Self {
        CalibrationSettings {
            fit: FitOptions::default(),
            theta_bounds,
            kappa_y_shape: DEFAULT_KAPPA_Y_SHAPE,
            mcmc,
            target: 0,
        }
    }
}

/// Across-prior comparison of posterior densities on a common grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub labels: Vec<String>,
    /// `L1[i][j] = ∫ |f_i − f_j|`.
    pub pairwise_l1: Vec<Vec<f64>>,
    pub mean_pairwise_l1: f64,
    pub modes: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    /// Equal-weight mixture of the densities.
    pub mixture: Density,
    pub mixture_interval: (f64, f64),
}

pub fn prior_sensitivity_report(densities: &[(String, Density)]) -> Result<SensitivityReport> {
    if densities.len() < 2 {
        return Err(Error::InvalidInput(
            "prior sensitivity needs at least two densities".to_string(),
        ));
    }
    let first = &densities[0].1;
    if densities.iter().any(|(_, d)| !d.same_grid(first)) {
        return Err(Error::InvalidInput("densities are on different grids".to_string()));
    }
    let m = densities.len();
    let mut pairwise = vec![vec![0.0; m]; m];
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let d = densities[i].1.l1_distance(&densities[j].1)?;
            pairwise[i][j] = d;
            pairwise[j][i] = d;
            sum += d;
        }
    }
    let mix: Vec<f64> = (0..first.grid.len())
        .map(|k| densities.iter().map(|(_, d)| d.density[k]).sum::<f64>() / m as f64)
        .collect();
    let mixture = Density::new(first.grid.clone(), mix)?;
    Ok(SensitivityReport {
        labels: densities.iter().map(|(l, _)| l.clone()).collect(),
        pairwise_l1: pairwise,
        mean_pairwise_l1: sum / (m * (m - 1) / 2) as f64,
        modes: densities.iter().map(|(_, d)| d.mode()).collect(),
        intervals: densities.iter().map(|(_, d)| d.interval(0.95)).collect(),
        mixture_interval: mixture.interval(0.95),
        mixture,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelStudy {
    pub level: Level,
    pub n_locations: usize,
    pub j_y: usize,
    pub j_d: usize,
    pub calibrations: Vec<CalibrationSummary>,
    /// `None` when only one prior was run.
    pub sensitivity: Option<SensitivityReport>,
    #[serde(skip)]
    pub posteriors: Vec<CalibrationPosterior>,
}

impl LevelStudy {
    pub fn divergence(&self) -> f64 {
        self.sensitivity.as_ref().map_or(0.0, |s| s.mean_pairwise_l1)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregationReport {
    pub levels: Vec<LevelStudy>,
}

impl AggregationReport {
    pub fn level(&self, level: Level) -> Option<&LevelStudy> {
        self.levels.iter().find(|l| l.level == level)
    }
}

/// Fit one model per level (levels in parallel).
pub fn build_level_models(
    ens: &Ensemble,
    levels: &[(Level, LevelSettings)],
    fit: &FitOptions,
) -> Result<Vec<LevelModel>> {
    levels
        .par_iter()
        .map(|(level, s)| LevelModel::build(ens, *level, s, fit))
        .collect()
}

/// Full pipeline per level (aggregate, basis, emulator, discrepancy) and one
/// calibration per prior.
pub fn aggregation_study(
    ens: &Ensemble,
    pseudo_obs: &GridField,
    priors: &[PriorChoice],
    levels: &[(Level, LevelSettings)],
    settings: &CalibrationSettings,
) -> Result<AggregationReport> {
    let models = build_level_models(ens, levels, &settings.fit)?;
    aggregation_study_with_models(&models, pseudo_obs, priors, settings)
}

pub fn aggregation_study_with_models(
    models: &[LevelModel],
    pseudo_obs: &GridField,
    priors: &[PriorChoice],
    settings: &CalibrationSettings,
) -> Result<AggregationReport> {
    if priors.is_empty() {
        return Err(Error::InvalidInput("no priors given".to_string()));
    }
    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|l| (0..priors.len()).map(move |p| (l, p)))
        .collect();
    let obs: Vec<_> = models
        .iter()
        .map(|m| m.observation_vector(pseudo_obs))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<(CalibrationSummary, CalibrationPosterior)> = tasks
        .par_iter()
        .map(|&(l, p)| {
            let m = &models[l];
            let spec = m.priors(&settings.theta_bounds, &priors[p], settings.kappa_y_shape)?;
            let mut mc = settings.mcmc.clone();
            mc.seed = derive_seed(settings.mcmc.seed, &[l as u64, p as u64]);
            let post = m.calibrate(&obs[l], &spec, &mc)?;
            let s = CalibrationSummary::from_posterior(&priors[p].label, &post, &spec, settings.target)?;
            Ok((s, post))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = runs.into_iter();
    let mut out = Vec::with_capacity(models.len());
    for m in models {
        let (summaries, posts): (Vec<_>, Vec<_>) = it.by_ref().take(priors.len()).unzip();
        let sensitivity = if summaries.len() >= 2 {
            let dens: Vec<(String, Density)> = summaries
                .iter()
                .map(|s| (s.label.clone(), s.density.clone().expect("set by from_posterior")))
                .collect();
            Some(prior_sensitivity_report(&dens)?)
        } else {
            None
        };
        out.push(LevelStudy {
            level: m.level,
            n_locations: m.n_locations(),
            j_y: m.j_y(),
            j_d: m.j_d(),
            calibrations: summaries,
            sensitivity,
            posteriors: posts,
        });
    }
    Ok(AggregationReport { levels: out })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsampleReport {
    pub level: Level,
    pub k: usize,
    pub n_locations: usize,
    pub repeats: Vec<CalibrationSummary>,
    /// Standard deviation of the posterior modes across repeats.
    pub mode_sd: f64,
    /// Mean Monte-Carlo standard error of the posterior mean within chains.
    pub mean_mcse: f64,
    pub ratio: f64,
    #[serde(skip)]
    pub posteriors: Vec<CalibrationPosterior>,
}

/// Repeat the calibration on independent random subsets of `k` locations.
#[allow(clippy::too_many_arguments)]
pub fn subsample_study(
    ens: &Ensemble,
    pseudo_obs: &GridField,
    level: Level,
    level_settings: &LevelSettings,
    k: usize,
    n_repeats: usize,
    seed: u64,
    prior: &PriorChoice,
    settings: &CalibrationSettings,
) -> Result<SubsampleReport> {
    if n_repeats == 0 {
        return Err(Error::InvalidInput("need at least one repeat".to_string()));
    }
    let agg = ens.aggregate(level)?;
    let design = agg.design()?;
    let n = design.n_locations();
    if k > n {
        return Err(Error::InvalidInput(format!(
            "subsample size {k} exceeds the {n} available locations"
        )));
    }
    let full_obs = {
        let support = design.support.clone().expect("built from fields");
        let agg_obs = super::ensemble::aggregate(pseudo_obs, level)?;
        super::ensemble::values_on_support(&agg_obs, &support)?
    };
    let runs: Vec<(CalibrationSummary, CalibrationPosterior)> = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let idx = subsample_indices(n, k, derive_seed(seed, &[r as u64]))?;
            let sub = design.select_locations(&idx)?;
            let model = LevelModel::from_design(&sub, level, level_settings, &settings.fit)?;
            let z = full_obs.select_rows(&idx);
            let spec = model.priors(&settings.theta_bounds, prior, settings.kappa_y_shape)?;
            let mut mc = settings.mcmc.clone();
            mc.seed = derive_seed(settings.mcmc.seed, &[1000 + r as u64]);
            let post = model.calibrate(&z, &spec, &mc)?;
            let s = CalibrationSummary::from_posterior(format!("repeat{r}"), &post, &spec, settings.target)?;
            Ok((s, post))
        })
        .collect::<Result<Vec<_>>>()?;
    let (repeats, posteriors): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let modes: Vec<f64> = repeats.iter().map(|s| s.mode).collect();
    let mode_sd = if modes.len() > 1 {
        crate::calibrator::mean_sd(&modes).1
    } else {
        0.0
    };
    let mean_mcse = repeats.iter().map(|s| s.mcse).sum::<f64>() / repeats.len() as f64;
    Ok(SubsampleReport {
        level,
        k,
        n_locations: n,
        ratio: mode_sd / mean_mcse,
        mode_sd,
        mean_mcse,
        repeats,
        posteriors,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn ensure_dirs(dir: &Path) -> Result<()> {
    for sub in ["densities", "chains"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// `densities/<level>_<prior>.csv`, `chains/<level>_<prior>.csv`, `report.json`.
pub fn write_aggregation_outputs(dir: impl AsRef<Path>, report: &AggregationReport) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dirs(dir)?;
    for l in &report.levels {
        for (s, post) in l.calibrations.iter().zip(&l.posteriors) {
            let stem = format!("{}_{}", l.level, s.label);
            if let Some(d) = &s.density {
                d.write_csv(dir.join("densities").join(format!("{stem}.csv")))?;
            }
            post.write_csv(dir.join("chains").join(format!("{stem}.csv")))?;
        }
        if let Some(sens) = &l.sensitivity {
            sens.mixture
                .write_csv(dir.join("densities").join(format!("{}_mixture.csv", l.level)))?;
        }
    }
    write_json(&dir.join("report.json"), report)
}

pub fn write_subsample_outputs(dir: impl AsRef<Path>, report: &SubsampleReport) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dirs(dir)?;
    for (s, post) in report.repeats.iter().zip(&report.posteriors) {
        if let Some(d) = &s.density {
            d.write_csv(dir.join("densities").join(format!("{}.csv", s.label)))?;
        }
        post.write_csv(dir.join("chains").join(format!("{}.csv", s.label)))?;
    }
    write_json(&dir.join("report.json"), report)
}
