//! Cross-module properties of the sampling and integration pipeline.

use fgle_core::convolution_sampler::{build_exact_sampler, riemann_covariance, sample_riemann, subsample};
use fgle_core::em_integrator::{run_coupled, run_em, strong_error};
use fgle_core::experiments::{run_with_threads, StudyConfig, StudyKind};
use fgle_core::fractional_noise::{aggregate_to_coarse, FgnSampler};
use fgle_core::hilbert_space::GCovariance;
use fgle_core::malliavin::{kernel_coefficients, malliavin_derivative, r_subgrid, MalliavinField};
use fgle_core::model::{Drift, ModelParams};
use fgle_core::stream::{path_stream, Purpose};
use fgle_core::volterra_kernel::{GridSpec, WeightMatrix};

#[test]
fn exact_sampler_empirical_covariance() {
    let grid = GridSpec::new(1.0, 16).unwrap();
    let sampler = build_exact_sampler(grid, 0.7, 0.7, 1.0).unwrap();
    let m = 100_000;
    let draws = sampler.sample_paths(101, 0, m);
    let cov = sampler.covariance();
    let mut worst = 0.0_f64;
    for i in 0..16 {
        for j in 0..=i {
            let prods: Vec<f64> = draws.iter().map(|d| d[i] * d[j]).collect();
            let mean = prods.iter().sum::<f64>() / m as f64;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            worst = worst.max((mean - cov[(i, j)]).abs() / (var / m as f64).sqrt());
        }
    }
    // 136 entries; a 4.5 sigma excursion has probability about 1e-3 overall
    assert!(worst < 4.5, "largest standard score {worst}");
}

#[test]
fn brownian_special_case_statistics() {
    let grid = GridSpec::new(1.0, 8).unwrap();
    let sampler = build_exact_sampler(grid, 1.0, 0.5, 1.0).unwrap();
    let m = 50_000;
    let draws = sampler.sample_paths(5, 0, m);
    // independent increments with variance h
    let inc: Vec<f64> = draws.iter().map(|d| d[5] - d[4]).collect();
    let first: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let var = inc.iter().map(|x| x * x).sum::<f64>() / m as f64;
    let cross = inc.iter().zip(&first).map(|(a, b)| a * b).sum::<f64>() / m as f64;
    assert!((var - 0.125).abs() < 4.0 * 0.125 * (2.0 / m as f64).sqrt());
    assert!(cross.abs() < 4.0 * 0.125 / (m as f64).sqrt());
}

#[test]
fn riemann_covariance_converges_to_exact() {
    let g = GCovariance::new(0.7, 0.7, 1.0).unwrap();
    let mut errs = Vec::new();
    for n in [32, 64, 128, 256] {
        let grid = GridSpec::new(1.0, n).unwrap();
        let rc = riemann_covariance(&grid, 0.7, 0.7, 1.0).unwrap();
        errs.push((rc - g.matrix(&grid).unwrap()).amax());
    }
    // halving h shrinks the worst entry by about 2^(2a + 2H - 2)
    for p in errs.windows(2) {
        let ratio = p[0] / p[1];
        assert!(ratio > 1.5 && ratio < 2.0, "{errs:?}");
    }
}

#[test]
fn riemann_sampler_agrees_with_fbm_for_unit_alpha_on_aggregated_noise() {
    let fine = GridSpec::new(1.0, 64).unwrap();
    let fgn = FgnSampler::new(64, 0.8).unwrap();
    let noise = fgn.sample_path(fine.step(), &mut path_stream(3, Purpose::FractionalNoise, 0));
    let coarse_noise = aggregate_to_coarse(&noise, 4).unwrap();
    let coarse = fine.coarsen(4).unwrap();
    let g_fine = sample_riemann(&fine, 1.0, 1.0, &noise).unwrap();
    let g_coarse = sample_riemann(&coarse, 1.0, 1.0, &coarse_noise).unwrap();
    for (a, b) in subsample(&g_fine, 4).unwrap().iter().zip(&g_coarse) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn coupling_shares_noise_at_common_times() {
    let fine = GridSpec::new(2.0, 128).unwrap();
    let sampler = build_exact_sampler(fine, 0.8, 0.6, 0.5).unwrap();
    let g = sampler.sample_paths(8, 0, 40);
    let model = ModelParams::new(0.8, 0.6, 0.5, 1.0, 2.0, Drift::Zero).unwrap();
    let c = run_coupled(&model, &fine, &[2, 8, 32], &g).unwrap();
    for (ratio, ens) in &c.levels {
        let nc = 128 / ratio;
        let errs = strong_error(ens, &c.fine, &(0..=nc).collect::<Vec<_>>()).unwrap();
        assert!(errs.iter().all(|e| *e <= 1e-12), "ratio {ratio}: {errs:?}");
    }
}

#[test]
fn malliavin_field_on_em_paths() {
    let model = ModelParams::new(0.7, 0.7, 1.0, 0.0, 1.0, Drift::Cos).unwrap();
    let grid = GridSpec::new(1.0, 32).unwrap();
    let sampler = build_exact_sampler(grid, 0.7, 0.7, 1.0).unwrap();
    let ens = run_em(&model, &grid, &sampler.sample_paths(12, 0, 3)).unwrap();
    let w = WeightMatrix::build(grid, 0.7).unwrap();
    for i in 0..3 {
        let states = ens.path(i);
        let field = MalliavinField::compute(states, &model, &grid, r_subgrid(&grid, 32, 0), &[8, 32], sampler.covariance()).unwrap();
        assert_eq!(field.values.len(), field.r_subgrid.len());
        assert!(field.h_norms.iter().all(|v| *v > 0.0));
        let c = kernel_coefficients(states, &model, &w, 8).unwrap();
        assert_eq!(c.len(), 8);
        let d = malliavin_derivative(states, &model, &grid, 0.0).unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn small_density_and_noise_studies_are_thread_independent() {
    for kind in [StudyKind::Density, StudyKind::NoiseValidation] {
        let mut c = StudyConfig::preset(kind, 0.7, 0.7).unwrap();
        c.fine_n = 64;
        c.ratios = vec![2, 4, 8];
        c.paths = 1000;
        let a = run_with_threads(&c, Some(1)).unwrap();
        let b = run_with_threads(&c, Some(4)).unwrap();
        assert_eq!(a.table_csv(), b.table_csv());
        assert_eq!(serde_json::to_string(&a.summary()).unwrap(), serde_json::to_string(&b.summary()).unwrap());
    }
}
