use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcacal::calibrator::{reduce_with_matrices, reduced_loglik, ReducedLikelihood};
use pcacal::discrepancy::build_kernel;
use pcacal::experiments::{aggregate, make_pseudo_obs, Ensemble, Level, PseudoObsConfig};
use pcacal::field_grid::{devectorize, vectorize, vertical_mean, zonal_mean, GridField, GridSpec};
use pcacal::pc_emulator::{build_basis, BasisSize, EnsembleDesign, GpHyperparams, PcEmulator};

/// Grid with strictly increasing axes, random positive volumes, values and
/// a mask that keeps at least one cell.
fn field_strategy() -> impl Strategy<Value = GridField> {
    (1usize..6, 1usize..5, 1usize..4).prop_flat_map(|(nlon, nlat, ndep)| {
        let n = nlon * nlat * ndep;
        (
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(prop::bool::weighted(0.7), n),
            0usize..n,
        )
            .prop_map(move |(vols, vals, mut mask, keep)| {
                mask[keep] = true;
                let lons = (0..nlon).map(|i| 20.0 * i as f64).collect();
                let lats = (0..nlat).map(|i| -60.0 + 25.0 * i as f64).collect();
                let deps = (0..ndep).map(|i| 100.0 + 400.0 * i as f64).collect();
                let spec = Arc::new(GridSpec::new(lons, lats, deps, vols).unwrap());
                let values = vals.iter().zip(&mask).map(|(&v, &m)| if m { v } else { f64::NAN }).collect();
                GridField::new(spec, values, mask).unwrap()
            })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn matrix(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| v[(i * cols + j) % v.len()] + 0.01 * ((i * 7 + j * 3) % 11) as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_preserves_weighted_mean(f in field_strategy()) {
        let m = f.weighted_mean().unwrap();
        let z = zonal_mean(&f).unwrap();
        let v = vertical_mean(&f).unwrap();
        let zv = vertical_mean(&z).unwrap();
        for g in [&z, &v, &zv] {
            prop_assert!(rel(g.weighted_mean().unwrap(), m) <= 1e-12);
        }
        // 2-D then 1-D equals 3-D straight to 1-D
        for (a, b) in zv.values().iter().zip(v.values()) {
            prop_assert!(a.is_nan() == b.is_nan());
            if !a.is_nan() {
                prop_assert!(rel(*a, *b) <= 1e-12);
            }
        }
    }

    #[test]
    fn slab_constants_are_reproduced(f in field_strategy(), slab in prop::collection::vec(-5.0f64..5.0, 20)) {
        let spec = f.spec().clone();
        let (nlon, nlat, _) = spec.shape();
        // constant along longitude within each (lat, depth) row
        let vals: Vec<f64> = (0..spec.n_cells())
            .map(|k| if f.mask()[k] { slab[(k / nlon) % slab.len()] } else { f64::NAN })
            .collect();
        let g = GridField::new(spec.clone(), vals, f.mask().to_vec()).unwrap();
        let z = zonal_mean(&g).unwrap();
        for (k, v) in z.values().iter().enumerate() {
            if z.mask()[k] {
                prop_assert_eq!(*v, slab[k % slab.len()]);
            }
        }
        // constant within each depth level
        let vals: Vec<f64> = (0..spec.n_cells())
            .map(|k| if f.mask()[k] { slab[k / (nlon * nlat)] } else { f64::NAN })
            .collect();
        let g = GridField::new(spec, vals, f.mask().to_vec()).unwrap();
        let v = vertical_mean(&g).unwrap();
        for (d, x) in v.values().iter().enumerate() {
            if v.mask()[d] {
                prop_assert_eq!(*x, slab[d]);
            }
        }
    }

    #[test]
    fn vectorize_roundtrips_in_canonical_order(f in field_strategy()) {
        let v = vectorize(&f).unwrap();
        prop_assert_eq!(v.len(), f.n_valid());
        let flat: Vec<usize> = v.locations.iter().map(|&c| f.spec().flat_index(c)).collect();
        prop_assert!(flat.windows(2).all(|w| w[0] < w[1]));
        let back = devectorize(&v).unwrap();
        prop_assert_eq!(back.mask(), f.mask());
        for (k, &m) in f.mask().iter().enumerate() {
            if m {
                prop_assert_eq!(back.values()[k], f.values()[k]);
            }
        }
        prop_assert_eq!(vectorize(&back).unwrap().locations, v.locations);
    }

    #[test]
    fn basis_columns_are_orthogonal(p in 3usize..10, n in 4usize..30, v in prop::collection::vec(-3.0f64..3.0, 50)) {
        let design = EnsembleDesign::from_raw(
            vec!["t".into()],
            (0..p).map(|i| vec![i as f64]).collect(),
            &matrix(p, n, &v),
        ).unwrap();
        let Ok(basis) = build_basis(&design.m, BasisSize::Fraction(1.0)) else { return Ok(()) };
        let g = basis.k_y.transpose() * &basis.k_y;
        let top = basis.eigenvalues[0];
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { basis.eigenvalues[i] } else { 0.0 };
                prop_assert!((g[(i, j)] - want).abs() <= 1e-8 * top);
            }
        }
        prop_assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn loglik_invariant_to_discrepancy_column_order(
        seed in 0u64..1000,
        sigma2 in 0.05f64..5.0,
        kappa_d in 0.05f64..5.0,
        shift in 1usize..6,
    ) {
        let n = 25;
        let (jy, jd) = (3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = |_: usize, _: usize| rng.random_range(-1.0..1.0);
        let k_y = DMatrix::from_fn(n, jy, &mut noise);
        let k_d = DMatrix::from_fn(n, jd, &mut noise);
        let z = DVector::from_fn(n, |i, j| 3.0 * noise(i, j));
        let means = DVector::zeros(n);
        let perm: Vec<usize> = (0..jd).map(|j| (j + shift) % jd).collect();
        let k_d_perm = DMatrix::from_fn(n, jd, |i, j| k_d[(i, perm[j])]);
        let a = reduce_with_matrices(&z, &k_y, Some(&k_d), &means).unwrap();
        let b = reduce_with_matrices(&z, &k_y, Some(&k_d_perm), &means).unwrap();
        for j in 0..jd {
            prop_assert!((b.z_r[jy + j] - a.z_r[jy + perm[j]]).abs() <= 1e-9 * (1.0 + a.z_r.amax()));
        }
        let mu = DVector::from_fn(jy, &mut noise);
        let var = DVector::from_fn(jy, |i, j| 0.5 + noise(i, j).abs());
        let la = ReducedLikelihood::new(&a).loglik(&mu, &var, sigma2, kappa_d).unwrap();
        let lb = ReducedLikelihood::new(&b).loglik(&mu, &var, sigma2, kappa_d).unwrap();
        prop_assert!(rel(la, lb) <= 1e-9);
    }

    #[test]
    fn kernel_gram_is_psd(
        picks in prop::collection::vec((0.0f64..360.0, -80.0f64..80.0, 0.0f64..4000.0), 2..40),
        phi_s in 500.0f64..8000.0,
        phi_d in 200.0f64..5000.0,
    ) {
        let coords: Vec<[f64; 3]> = picks.iter().map(|&(a, b, c)| [a, b, c]).collect();
        let knots: Vec<[f64; 3]> = (0..30)
            .map(|k| [12.0 * k as f64, -70.0 + 5.0 * (k % 29) as f64, 500.0 * (k % 7) as f64])
            .collect();
        let k = build_kernel(&coords, &knots, phi_s, phi_d).unwrap();
        let g = &k * k.transpose();
        let eig = g.clone().symmetric_eigen();
        let tr = g.trace();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-8 * tr));
        prop_assert!(k.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn aggregation_commutes_with_pseudo_obs(
        f in field_strategy(),
        scales in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let spec = f.spec().clone();
        let mk = |s: f64| {
            let v = f.values().iter().enumerate().map(|(k, x)| x * s + (k % 5) as f64 * (1.0 - s)).collect();
            GridField::new(spec.clone(), v, f.mask().to_vec()).unwrap()
        };
        let fields: Vec<GridField> = scales[..3].iter().map(|&s| mk(s)).collect();
        let ens = Ensemble::new(
            vec!["k".into()],
            vec![vec![0.1], vec![0.2], vec![0.3]],
            fields.clone(),
        ).unwrap();
        let obs = mk(scales[3]);
        let cfg = PseudoObsConfig {
            truth_theta: vec![0.2],
            residual_source_thetas: vec![vec![0.1], vec![0.3]],
        };
        let pseudo = make_pseudo_obs(&ens, &obs, &cfg).unwrap();
        let resid = obs
            .zip_with(&fields[0], |o, m| 0.5 * (o - m))
            .unwrap()
            .zip_with(&obs.zip_with(&fields[2], |o, m| 0.5 * (o - m)).unwrap(), |a, b| a + b)
            .unwrap();
        for level in [Level::TwoD, Level::OneD] {
            let lhs = aggregate(&pseudo, level).unwrap();
            let a = aggregate(&fields[1], level).unwrap();
            let b = aggregate(&resid, level).unwrap();
            for k in 0..lhs.values().len() {
                if lhs.mask()[k] {
                    let rhs = a.values()[k] + b.values()[k];
                    prop_assert!((lhs.values()[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
                }
            }
        }
    }
}

/// With σ² → 0, no discrepancy and κ_y at the fitted sills, the best θ on a
/// grid is the one that best explains the reduced observation under the
/// emulator's predictive distribution.
#[test]
fn small_noise_argmax_matches_predictive_density() {
    let p = 9;
    let n = 15;
    let thetas: Vec<Vec<f64>> = (0..p).map(|i| vec![i as f64 / (p - 1) as f64]).collect();
    let m_raw = DMatrix::from_fn(p, n, |i, j| {
        let t = thetas[i][0];
        (t * (j as f64 + 1.0)).sin() + 0.3 * (2.0 * t + 0.1 * j as f64).cos()
    });
    let design = EnsembleDesign::from_raw(vec!["t".into()], thetas, &m_raw).unwrap();
    let basis = build_basis(&design.m, BasisSize::Count(2)).unwrap();
    let hyper = vec![
        GpHyperparams { kappa: 1.0, zeta: 1e-3, phis: vec![0.4] },
        GpHyperparams { kappa: 0.8, zeta: 1e-3, phis: vec![0.3] },
    ];
    let em = PcEmulator::with_hyperparams(&design, basis.clone(), hyper.clone()).unwrap();
    let sills: Vec<f64> = hyper.iter().map(|h| h.kappa).collect();
    let grid: Vec<f64> = (0..41).map(|g| 0.01 + 0.98 * g as f64 / 40.0).collect();
    for target in [0.17, 0.43, 0.78] {
        let mut z = em.predict_field(&[target]).unwrap();
        for (i, v) in z.iter_mut().enumerate() {
            *v += 0.05 * ((i * 13 % 7) as f64 - 3.0);
        }
        let zr = reduce_with_matrices(&z, &basis.k_y, None, &design.column_means).unwrap();
        let argmax = |f: &dyn Fn(f64) -> f64| {
            grid.iter().copied().max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap()
        };
        let by_loglik = argmax(&|t| reduced_loglik(&zr, &em, &[t], 1e-12, 1.0, &sills).unwrap());
        let by_density = argmax(&|t| {
            let pred = em.predict(&[t], None).unwrap();
            (0..2)
                .map(|j| {
                    let r = zr.z_r[j] - pred.mean[j];
                    -0.5 * (r * r / pred.var[j] + pred.var[j].ln())
                })
                .sum()
        });
        assert_eq!(by_loglik, by_density, "target {target}");
    }
}
