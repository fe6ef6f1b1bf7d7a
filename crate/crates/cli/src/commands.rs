use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use pcacal::calibrator::{
    equal_tailed_interval, mcse_batch_means, mean_sd, posterior_density, CalibrationPosterior, PriorSpec,
    SplitHalfSummary,
};
use pcacal::discrepancy::{make_knot_grid, TruncationSize};
use pcacal::experiments::benchmark::{benchmark_ensemble, benchmark_observation, BenchmarkConfig};
use pcacal::experiments::{
    aggregate, aggregation_study_with_models, build_level_models, cross_validate, derive_seed, make_pseudo_obs,
    project_response, subsample_study, write_aggregation_outputs, write_subsample_outputs, CalibrationSettings,
    Ensemble, Level, LevelModel, LevelSettings, ProjectionTable, PseudoObsConfig,
};
use pcacal::field_grid::{read_field_csv, write_field_csv, EnsembleManifest, GridField, RunEntry};
use pcacal::pc_emulator::BasisSize;
use pcacal::{Error, Result};

use crate::config::{RunConfig, StudyKind, SubsampleSize};

/// A command whose inputs are loaded and checked, ready to run.
#[allow(clippy::large_enum_variant)]
pub enum Plan {
    Emulate {
        ensemble: Ensemble,
        level: Level,
        settings: LevelSettings,
    },
    Calibrate {
        model: LevelModel,
        z: nalgebra::DVector<f64>,
        priors: PriorSpec,
    },
    Study {
        ensemble: Ensemble,
        observation: GridField,
    },
    Cv {
        ensemble: Ensemble,
    },
    Project {
        draws: Vec<f64>,
        parameter: String,
        table: ProjectionTable,
    },
    Synth,
}

pub const COMMANDS: [&str; 6] = ["emulate", "calibrate", "study", "cv", "project", "synth"];

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| Error::config(key, "required by this command"))?;
    if !p.exists() {
        return Err(Error::config(key, format!("{} does not exist", p.display())));
    }
    Ok(p)
}

pub fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out.clone().ok_or_else(|| Error::config("out", "required (or pass --out)"))?;
    if out.is_file() {
        return Err(Error::config("out", format!("{} is a file", out.display())));
    }
    Ok(out)
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    info!("{stage}: {:.3} s", t.elapsed().as_secs_f64());
    r
}

/// θ bounds in parameter order: configured values, else the design range.
fn theta_bounds(cfg: &RunConfig, names: &[String], thetas: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    for (n, _) in &cfg.theta_bounds {
        if !names.contains(n) {
            return Err(Error::config(format!("prior.theta.{n}"), "no such parameter in the ensemble"));
        }
    }
    Ok(names
        .iter()
        .enumerate()
        .map(|(d, n)| {
            cfg.theta_bounds
                .iter()
                .find(|(m, _)| m == n)
                .map(|(_, b)| *b)
                .unwrap_or_else(|| {
                    let lo = thetas.iter().map(|t| t[d]).fold(f64::INFINITY, f64::min);
                    let hi = thetas.iter().map(|t| t[d]).fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                })
        })
        .collect())
}

fn fixed_theta(cfg: &RunConfig, names: &[String]) -> Result<Vec<Option<f64>>> {
    for (n, _) in &cfg.fixed_theta {
        if !names.contains(n) {
            return Err(Error::config(format!("fixed.{n}"), "no such parameter"));
        }
    }
    Ok(names
        .iter()
        .map(|n| cfg.fixed_theta.iter().find(|(m, _)| m == n).map(|(_, v)| *v))
        .collect())
}

fn calibration_settings(cfg: &RunConfig, ens: &Ensemble) -> Result<CalibrationSettings> {
    let bounds = theta_bounds(cfg, &ens.parameter_names, &ens.thetas)?;
    let mut mcmc = cfg.mcmc.clone();
    mcmc.fixed_theta = fixed_theta(cfg, &ens.parameter_names)?;
    let target = match &cfg.projection_parameter {
        None => 0,
        Some(p) => ens
            .parameter_names
            .iter()
            .position(|n| n == p)
            .ok_or_else(|| Error::config("project.parameter", format!("no parameter `{p}`")))?,
    };
    Ok(CalibrationSettings {
        fit: cfg.fit.clone(),
        theta_bounds: bounds,
        kappa_y_shape: cfg.kappa_y_shape,
        mcmc,
        target,
    })
}

fn study_observation(cfg: &RunConfig, ens: &Ensemble, obs: GridField) -> Result<GridField> {
    let study = cfg.study.as_ref().expect("checked by caller");
    let Some(truth) = &study.truth else {
        return Ok(obs);
    };
    let q = ens.parameter_names.len();
    let mut t = Vec::with_capacity(q);
    for n in &ens.parameter_names {
        let v = truth
            .iter()
            .find(|(m, _)| m == n)
            .ok_or_else(|| Error::config(format!("study.truth.{n}"), "missing"))?;
        t.push(v.1);
    }
    if let Some((n, _)) = truth.iter().find(|(n, _)| !ens.parameter_names.contains(n)) {
        return Err(Error::config(format!("study.truth.{n}"), "no such parameter"));
    }
    if let Some(r) = study.residual_sources.iter().find(|r| r.len() != q) {
        return Err(Error::config(
            "study.residual_sources",
            format!("each source needs {q} values, got {r:?}"),
        ));
    }
    make_pseudo_obs(
        ens,
        &obs,
        &PseudoObsConfig {
            truth_theta: t,
            residual_source_thetas: study.residual_sources.clone(),
        },
    )
}

/// Component counts that cannot be met on this ensemble are configuration
/// errors, caught before any fitting.
fn check_level(ens: &Ensemble, level: Level, s: &LevelSettings, prefix: &str) -> Result<()> {
    if let BasisSize::Count(j) = s.basis {
        if j >= ens.len() {
            return Err(Error::config(
                format!("{prefix}emulator.components"),
                format!("{j} components need more than {} runs", ens.len()),
            ));
        }
    }
    if let Some(d) = &s.discrepancy {
        let field = aggregate(&ens.fields[0], level)?;
        let knots = make_knot_grid(field.spec(), d.lat_step, d.lon_step, d.depth_step)?;
        let most = knots.len().min(field.n_valid());
        if let TruncationSize::Count(j) = d.size {
            if j > most {
                return Err(Error::config(
                    format!("{prefix}discrepancy.components"),
                    format!("{j} exceeds the {most} available at level {level} ({} knots)", knots.len()),
                ));
            }
        }
    }
    Ok(())
}

fn read_chain_column(path: &Path, column: &str, skip: usize) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let k = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::InvalidInput(format!("{} has no column `{column}`", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i < skip {
            continue;
        }
        let v: f64 = rec[k]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad number in {} row {}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Load and check everything a command needs. Nothing is written.
pub fn prepare(command: &str, cfg: &RunConfig) -> Result<Plan> {
    match command {
        "emulate" | "cv" => {
            let path = require(&cfg.ensemble, "ensemble")?;
            out_dir(cfg)?;
            let ensemble = Ensemble::load(&path)?;
            check_level(&ensemble, cfg.level, &cfg.settings, "")?;
            if command == "cv" {
                return Ok(Plan::Cv { ensemble });
            }
            Ok(Plan::Emulate {
                ensemble,
                level: cfg.level,
                settings: cfg.settings.clone(),
            })
        }
        "calibrate" => {
            let model_dir = require(&cfg.model, "model")?;
            let obs_path = require(&cfg.observation, "observation")?;
            out_dir(cfg)?;
            let model = LevelModel::load(&model_dir)?;
            let obs = read_field_csv(&obs_path)?;
            let z = model.observation_vector(&obs)?;
            let em = &model.emulator;
            let bounds = theta_bounds(cfg, &em.parameter_names, &em.thetas)?;
            let priors = PriorSpec::new(bounds, cfg.sigma2, cfg.kappa_d, cfg.kappa_y_shape, &em.sills())?;
            fixed_theta(cfg, &em.parameter_names)?;
            Ok(Plan::Calibrate { model, z, priors })
        }
        "study" => {
            if cfg.study.is_none() {
                return Err(Error::config("study", "required by `study`; valid selectors: aggregation, subsample"));
            }
            let path = require(&cfg.ensemble, "ensemble")?;
            let obs_path = require(&cfg.observation, "observation")?;
            out_dir(cfg)?;
            let ensemble = Ensemble::load(&path)?;
            let obs = read_field_csv(&obs_path)?;
            let observation = study_observation(cfg, &ensemble, obs)?;
            calibration_settings(cfg, &ensemble)?;
            let study = cfg.study.as_ref().expect("checked above");
            let levels = match study.kind {
                StudyKind::Aggregation => study.levels.clone(),
                StudyKind::Subsample => vec![cfg.level],
            };
            for l in levels {
                check_level(&ensemble, l, &study.level_settings[&l], &format!("level.{l}."))?;
            }
            Ok(Plan::Study { ensemble, observation })
        }
        "project" => {
            let dir = require(&cfg.calibration, "calibration")?;
            let table_path = require(&cfg.projection_table, "project.table")?;
            out_dir(cfg)?;
            let report: serde_json::Value = {
                let p = dir.join("report.json");
                let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_reader(f)?
            };
            let names: Vec<String> = report["parameters"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
                .unwrap_or_default();
            let burn_in = report["burn_in"].as_u64().unwrap_or(0) as usize;
            let parameter = match &cfg.projection_parameter {
                Some(p) if names.contains(p) => p.clone(),
                Some(p) => return Err(Error::config("project.parameter", format!("no parameter `{p}`"))),
                None => names
                    .first()
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput("calibration report lists no parameters".to_string()))?,
            };
            let draws = read_chain_column(&dir.join("chain.csv"), &format!("theta.{parameter}"), burn_in)?;
            let table = ProjectionTable::read_csv(&table_path)?;
            Ok(Plan::Project { draws, parameter, table })
        }
        "synth" => {
            out_dir(cfg)?;
            Ok(Plan::Synth)
        }
        other => Err(Error::config(
            "command",
            format!("unknown command `{other}`; valid commands: {}", COMMANDS.join(", ")),
        )),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct EmulateReport {
    level: Level,
    n_locations: usize,
    n_runs: usize,
    j_y: usize,
    explained_fraction: f64,
    eigenvalues: Vec<f64>,
    j_d: usize,
    n_knots: usize,
    discrepancy_explained_fraction: Option<f64>,
    cv_fraction_outside_2: Option<f64>,
    cv_mean_rmse: Option<f64>,
}

#[derive(Serialize)]
struct QuantitySummary {
    name: String,
    mode: f64,
    mean: f64,
    sd: f64,
    interval_95: (f64, f64),
    mcse: f64,
}

#[derive(Serialize)]
struct CalibrateReport {
    level: Level,
    parameters: Vec<String>,
    n_locations: usize,
    j_y: usize,
    j_d: usize,
    gram_condition: f64,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    acceptance: Vec<(String, f64)>,
    summaries: Vec<QuantitySummary>,
    split_half: Vec<SplitHalfSummary>,
}

fn summarise(post: &CalibrationPosterior, name: &str, priors: &PriorSpec) -> Result<QuantitySummary> {
    let draws = post.draws(name)?;
    let density = posterior_density(post, name, priors, None)?;
    let (mean, sd) = mean_sd(&draws);
    Ok(QuantitySummary {
        name: name.to_string(),
        mode: density.mode(),
        mean,
        sd,
        interval_95: equal_tailed_interval(&draws, 0.95),
        mcse: mcse_batch_means(&draws),
    })
}

pub fn run(plan: Plan, cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    match plan {
        Plan::Emulate {
            ensemble,
            level,
            settings,
        } => {
            let design = timed("aggregate", || ensemble.aggregate(level)?.design())?;
            let model = timed("emulate", || LevelModel::from_design(&design, level, &settings, &cfg.fit))?;
            let cv = if cfg.cv_rounds > 0 {
                Some(timed("cross-validate", || {
                    cross_validate(
                        &design,
                        settings.basis,
                        &cfg.fit,
                        cfg.cv_holdout,
                        cfg.cv_rounds,
                        derive_seed(cfg.seed, &[1]),
                    )
                })?)
            } else {
                None
            };
            create_dir(&out)?;
            model.save(&out)?;
            let report = EmulateReport {
                level,
                n_locations: model.n_locations(),
                n_runs: design.n_design(),
                j_y: model.j_y(),
                explained_fraction: model.emulator.basis.explained_fraction,
                eigenvalues: model.emulator.basis.eigenvalues.to_vec(),
                j_d: model.j_d(),
                n_knots: model.discrepancy.as_ref().map_or(0, |d| d.knots.knots.len()),
                discrepancy_explained_fraction: model.discrepancy.as_ref().map(|d| d.explained_fraction()),
                cv_fraction_outside_2: cv.as_ref().map(|c| c.fraction_outside_2),
                cv_mean_rmse: cv.as_ref().map(|c| c.mean_rmse),
            };
            if let Some(c) = &cv {
                write_json(&out.join("cv.json"), c)?;
            }
            write_json(&out.join("report.json"), &report)?;
            info!(
                "J_y = {} ({:.4} of variance), J_d = {}",
                report.j_y, report.explained_fraction, report.j_d
            );
        }
        Plan::Calibrate { model, z, priors } => {
            let em = &model.emulator;
            let mut mcmc = cfg.mcmc.clone();
            mcmc.fixed_theta = fixed_theta(cfg, &em.parameter_names)?;
            let zr = model.reduce(&z)?;
            let post = timed("calibrate", || model.calibrate(&z, &priors, &mcmc))?;
            let mut names: Vec<String> = em
                .parameter_names
                .iter()
                .zip(&mcmc.fixed_theta)
                .filter(|(_, f)| f.is_none())
                .map(|(n, _)| format!("theta.{n}"))
                .collect();
            for (b, n) in [(1, "sigma2"), (2, "kappa_d")] {
                if post.sampled_blocks[b] {
                    names.push(n.to_string());
                }
            }
            let mut summaries = Vec::new();
            for n in &names {
                summaries.push(summarise(&post, n, &priors)?);
            }
            create_dir(&out.join("densities"))?;
            for n in &names {
                posterior_density(&post, n, &priors, None)?.write_csv(out.join("densities").join(format!("{n}.csv")))?;
            }
            post.write_csv(out.join("chain.csv"))?;
            let report = CalibrateReport {
                level: model.level,
                parameters: em.parameter_names.clone(),
                n_locations: model.n_locations(),
                j_y: model.j_y(),
                j_d: model.j_d(),
                gram_condition: zr.condition,
                iterations: mcmc.n_iter,
                burn_in: post.burn_in,
                seed: mcmc.seed,
                acceptance: post.acceptance_rates(),
                summaries,
                split_half: post.split_half(),
            };
            write_json(&out.join("report.json"), &report)?;
        }
        Plan::Study { ensemble, observation } => {
            let study = cfg.study.as_ref().expect("checked in prepare");
            let settings = calibration_settings(cfg, &ensemble)?;
            create_dir(&out)?;
            write_field_csv(&observation, out.join("observation_used.csv"))?;
            match study.kind {
                StudyKind::Aggregation => {
                    let levels: Vec<(Level, LevelSettings)> = study
                        .levels
                        .iter()
                        .map(|l| (*l, study.level_settings[l].clone()))
                        .collect();
                    let models = timed("emulate levels", || build_level_models(&ensemble, &levels, &cfg.fit))?;
                    let report = timed("calibrate", || {
                        aggregation_study_with_models(&models, &observation, &study.priors, &settings)
                    })?;
                    for l in &report.levels {
                        info!("{}: divergence {:.4}", l.level, l.divergence());
                    }
                    write_aggregation_outputs(&out, &report)?;
                }
                StudyKind::Subsample => {
                    let level = cfg.level;
                    let n = aggregate(&ensemble.fields[0], level)?.n_valid();
                    let k = match study.subsample {
                        SubsampleSize::Count(k) => k,
                        SubsampleSize::Fraction(f) => ((f * n as f64).round() as usize).max(1),
                    };
                    let prior = study.priors.first().ok_or_else(|| Error::config("study.priors", "empty"))?;
                    let report = timed("subsample", || {
                        subsample_study(
                            &ensemble,
                            &observation,
                            level,
                            &study.level_settings[&level],
                            k,
                            study.repeats,
                            derive_seed(cfg.seed, &[2]),
                            prior,
                            &settings,
                        )
                    })?;
                    info!("k = {k}: mode sd / MCSE = {:.2}", report.ratio);
                    write_subsample_outputs(&out, &report)?;
                }
            }
        }
        Plan::Cv { ensemble } => {
            let design = ensemble.aggregate(cfg.level)?.design()?;
            let report = timed("cross-validate", || {
                cross_validate(
                    &design,
                    cfg.settings.basis,
                    &cfg.fit,
                    cfg.cv_holdout,
                    cfg.cv_rounds.max(1),
                    derive_seed(cfg.seed, &[1]),
                )
            })?;
            create_dir(&out)?;
            write_json(&out.join("cv.json"), &report)?;
            info!(
                "{} whitened errors, {:.3} outside ±2",
                report.whitened.len(),
                report.fraction_outside_2
            );
        }
        Plan::Project { draws, parameter, table } => {
            let res = project_response(&draws, &table)?;
            create_dir(&out)?;
            res.density.write_csv(out.join("projection_density.csv"))?;
            let (mean, sd) = mean_sd(&res.draws);
            write_json(
                &out.join("projection.json"),
                &serde_json::json!({
                    "parameter": parameter,
                    "n_draws": res.draws.len(),
                    "mean": mean,
                    "sd": sd,
                    "mode": res.density.mode(),
                    "interval_95": res.interval,
                    "n_clamped": res.n_clamped,
                }),
            )?;
        }
        Plan::Synth => {
            let bc = BenchmarkConfig::default();
            let ens = benchmark_ensemble(&bc)?;
            let obs = benchmark_observation(&ens, &bc, cfg.seed)?;
            let runs_dir = out.join("ensemble");
            create_dir(&runs_dir)?;
            let mut runs = Vec::new();
            for (i, (t, f)) in ens.thetas.iter().zip(&ens.fields).enumerate() {
                let name = format!("run{i:03}.csv");
                write_field_csv(f, runs_dir.join(&name))?;
                runs.push(RunEntry {
                    theta: t.clone(),
                    field: PathBuf::from(name),
                });
            }
            EnsembleManifest {
                parameters: ens.parameter_names.clone(),
                runs,
            }
            .write(runs_dir.join("manifest.json"))?;
            write_field_csv(&obs, out.join("observation.csv"))?;
            write_json(&out.join("benchmark.json"), &bc)?;
        }
    }
    Ok(())
}

/// Human-readable plan: levels, sizes and the dominant costs.
pub fn describe(command: &str, plan: &Plan, cfg: &RunConfig) -> Result<Vec<String>> {
    let mut lines = vec![format!("command: {command}")];
    if let Ok(out) = out_dir(cfg) {
        lines.push(format!("output: {}", out.display()));
    }
    let basis = |b: BasisSize| match b {
        BasisSize::Count(c) => format!("J_y = {c}"),
        BasisSize::Fraction(f) => format!("J_y for {f} of variance"),
    };
    let level_line = |ens: &Ensemble, level: Level, s: &LevelSettings| -> Result<String> {
        let field = aggregate(&ens.fields[0], level)?;
        let n = field.n_valid();
        let disc = match &s.discrepancy {
            None => "no discrepancy".to_string(),
            Some(d) => {
                let knots = make_knot_grid(field.spec(), d.lat_step, d.lon_step, d.depth_step)?;
                format!(
                    "{} knots, J_d^PC {:?}, kernel {} × {} locations",
                    knots.knots.len(),
                    d.size,
                    n,
                    knots.knots.len()
                )
            }
        };
        Ok(format!(
            "level {level}: n = {n}, p = {}, {}, GP fits O(J_y p³), {disc}",
            ens.len(),
            basis(s.basis)
        ))
    };
    match plan {
        Plan::Emulate {
            ensemble,
            level,
            settings,
        } => {
            lines.push(level_line(ensemble, *level, settings)?);
            lines.push(format!(
                "emulator: {} restarts per component; cross-validation {} rounds at hold-out {}",
                cfg.fit.restarts, cfg.cv_rounds, cfg.cv_holdout
            ));
        }
        Plan::Calibrate { model, .. } => {
            let j = model.j_y() + model.j_d();
            lines.push(format!(
                "level {}: n = {}, J_y = {}, J_d^PC = {}",
                model.level,
                model.n_locations(),
                model.j_y(),
                model.j_d()
            ));
            lines.push(format!(
                "mcmc: {} iterations ({} burn-in), reduced dimension {j}, likelihood O({}³) per evaluation",
                cfg.mcmc.n_iter,
                cfg.mcmc.burn_in(),
                j
            ));
        }
        Plan::Study { ensemble, .. } => {
            let study = cfg.study.as_ref().expect("checked in prepare");
            match study.kind {
                StudyKind::Aggregation => {
                    for l in &study.levels {
                        lines.push(level_line(ensemble, *l, &study.level_settings[l])?);
                    }
                    lines.push(format!(
                        "aggregation: {} levels × {} priors = {} calibrations of {} iterations",
                        study.levels.len(),
                        study.priors.len(),
                        study.levels.len() * study.priors.len(),
                        cfg.mcmc.n_iter
                    ));
                }
                StudyKind::Subsample => {
                    lines.push(level_line(ensemble, cfg.level, &study.level_settings[&cfg.level])?);
                    lines.push(format!(
                        "subsample: {:?} locations, {} repeats of {} iterations",
                        study.subsample, study.repeats, cfg.mcmc.n_iter
                    ));
                }
            }
        }
        Plan::Cv { ensemble } => {
            lines.push(level_line(ensemble, cfg.level, &cfg.settings)?);
            lines.push(format!("cross-validation: {} rounds at hold-out {}", cfg.cv_rounds, cfg.cv_holdout));
        }
        Plan::Project { draws, parameter, table } => {
            let (lo, hi) = table.response_range();
            lines.push(format!(
                "project: {} draws of {parameter} through a {}-point table (response {lo} to {hi})",
                draws.len(),
                table.theta.len()
            ));
        }
        Plan::Synth => lines.push("synth: benchmark ensemble (50 runs) and one observation".to_string()),
    }
    Ok(lines)
}
