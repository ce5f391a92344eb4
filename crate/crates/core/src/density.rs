//! Gaussian kernel density estimates on uniform grids and L1 / total
//! variation distances between them.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{FgleError, Result};

/// Evaluation points used by the studies.
pub const DEFAULT_GRID_POINTS: usize = 2048;
/// Grid half-width in pooled standard deviations.
pub const GRID_HALF_WIDTH: f64 = 6.0;
/// Kernel contributions beyond this many bandwidths are dropped (`exp(-32)`).
pub const KERNEL_CUTOFF: f64 = 8.0;
/// Minimum sample count accepted by [`kde`].
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid_points: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub sample_count: usize,
}

impl DensityEstimate {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid_points, &self.values)
    }

    /// Two-column CSV `point,value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "point,value")?;
        for (x, v) in self.grid_points.iter().zip(&self.values) {
            writeln!(out, "{x:e},{v:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule.
    Auto,
    Fixed(f64),
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(FgleError::InvalidParameter(format!("bad grid [{lo}, {hi}] with {n} points")));
    }
    let dx = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * dx }).collect())
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
    (m, v)
}

/// Grid over the pooled mean +- 6 pooled standard deviations, inflated by
/// the largest auto bandwidth so the kernel tails stay on the grid.
pub fn pooled_grid(sets: &[&[f64]], n: usize) -> Result<Vec<f64>> {
    let pooled: Vec<f64> = sets.iter().flat_map(|s| s.iter().cloned()).collect();
    if pooled.is_empty() {
        return Err(FgleError::DegenerateSamples("no samples".into()));
    }
    let (m, v) = mean_var(&pooled);
    let bw = sets.iter().map(|s| silverman_bandwidth(s)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let half = GRID_HALF_WIDTH * (v + bw * bw).sqrt();
    uniform_grid(m - half, m + half, n)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `1.06 min(std, IQR / 1.34) M^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 || samples.iter().any(|x| !x.is_finite()) {
        return Err(FgleError::DegenerateSamples("need at least two finite samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let std = mean_var(samples).1.sqrt();
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { std.min(iqr) } else { std };
    if !(spread > 0.0) {
        return Err(FgleError::DegenerateSamples("samples have zero spread".into()));
    }
    Ok(1.06 * spread * (samples.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate at `eval_grid`.
pub fn kde(samples: &[f64], bandwidth: Bandwidth, eval_grid: &[f64]) -> Result<DensityEstimate> {
    if samples.len() < MIN_SAMPLES {
        return Err(FgleError::DegenerateSamples(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(FgleError::DegenerateSamples("non-finite sample".into()));
    }
    let bw = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(samples)?,
        Bandwidth::Fixed(b) if b > 0.0 && b.is_finite() => b,
        Bandwidth::Fixed(b) => return Err(FgleError::InvalidParameter(format!("bandwidth must be positive, got {b}"))),
    };
    if eval_grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(FgleError::InvalidParameter("evaluation grid must be strictly increasing".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (samples.len() as f64 * bw * (2.0 * PI).sqrt());
    let reach = KERNEL_CUTOFF * bw;
    let values = eval_grid
        .par_iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&s| s < x - reach);
            let hi = sorted.partition_point(|&s| s <= x + reach);
            let sum: f64 = sorted[lo..hi]
                .iter()
                .map(|&s| {
                    let z = (x - s) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum();
            norm * sum
        })
        .collect();
    Ok(DensityEstimate { grid_points: eval_grid.to_vec(), values, bandwidth: bw, sample_count: samples.len() })
}

/// Trapezoid integral of `|p - q|` on their common grid.
pub fn l1_distance(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    if p.grid_points != q.grid_points {
        return Err(FgleError::GridMismatch("densities live on different grids".into()));
    }
    let diff: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).collect();
    Ok(trapezoid(&p.grid_points, &diff))
}

/// `0.5 * l1(kde(a), kde(b))` with the larger of the two auto bandwidths.
pub fn tv_distance_samples(a: &[f64], b: &[f64], eval_grid: &[f64]) -> Result<f64> {
    let bw = silverman_bandwidth(a)?.max(silverman_bandwidth(b)?);
    let pa = kde(a, Bandwidth::Fixed(bw), eval_grid)?;
    let pb = kde(b, Bandwidth::Fixed(bw), eval_grid)?;
    Ok(0.5 * l1_distance(&pa, &pb)?)
}

/// Normal density on `eval_grid`.
pub fn gaussian_reference(mean: f64, variance: f64, eval_grid: &[f64]) -> Result<DensityEstimate> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(FgleError::InvalidParameter(format!("variance must be positive, got {variance}")));
    }
    let norm = 1.0 / (2.0 * PI * variance).sqrt();
    let values = eval_grid.iter().map(|&x| norm * (-0.5 * (x - mean) * (x - mean) / variance).exp()).collect();
    Ok(DensityEstimate { grid_points: eval_grid.to_vec(), values, bandwidth: 0.0, sample_count: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolution_sampler::build_exact_sampler;
    use crate::hilbert_space::GCovariance;
    use crate::stream::{path_stream, Purpose};
    use crate::volterra_kernel::GridSpec;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normals(seed: u64, m: usize) -> Vec<f64> {
        let mut rng = path_stream(seed, Purpose::Validation, 0);
        (0..m).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn standard_normal_recovery_improves_with_m() {
        let grid = uniform_grid(-7.0, 7.0, DEFAULT_GRID_POINTS).unwrap();
        let exact = gaussian_reference(0.0, 1.0, &grid).unwrap();
        let errs: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&m| l1_distance(&kde(&normals(3, m), Bandwidth::Auto, &grid).unwrap(), &exact).unwrap())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 0.02, "{errs:?}");
    }

    #[test]
    fn estimates_integrate_to_one() {
        let s = normals(4, 5_000);
        let grid = pooled_grid(&[&s], DEFAULT_GRID_POINTS).unwrap();
        let d = kde(&s, Bandwidth::Auto, &grid).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-3);
        assert!(d.values.iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = s.iter().map(|x| 3.0 * x + 10.0).collect();
        let grid = pooled_grid(&[&s, &shifted], DEFAULT_GRID_POINTS).unwrap();
        for set in [&s, &shifted] {
            assert!((kde(set, Bandwidth::Auto, &grid).unwrap().integral() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let s = normals(5, 2_000);
        let grid = uniform_grid(-5.0, 5.0, 401).unwrap();
        let base = kde(&s, Bandwidth::Fixed(0.2), &grid).unwrap();
        let c = 0.75;
        let s_shift: Vec<f64> = s.iter().map(|x| x + c).collect();
        let g_shift: Vec<f64> = grid.iter().map(|x| x + c).collect();
        let moved = kde(&s_shift, Bandwidth::Fixed(0.2), &g_shift).unwrap();
        for (a, b) in base.values.iter().zip(&moved.values) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let k = 2.5;
        let s_scale: Vec<f64> = s.iter().map(|x| k * x).collect();
        let g_scale: Vec<f64> = grid.iter().map(|x| k * x).collect();
        let scaled = kde(&s_scale, Bandwidth::Fixed(0.2 * k), &g_scale).unwrap();
        for (a, b) in base.values.iter().zip(&scaled.values) {
            assert_relative_eq!(*b, a / k, max_relative = 1e-10, epsilon = 1e-300);
        }
    }

    #[test]
    fn l1_examples() {
        let grid = uniform_grid(-10.0, 10.0, 4001).unwrap();
        let p = gaussian_reference(0.0, 1.0, &grid).unwrap();
        assert_eq!(l1_distance(&p, &p).unwrap(), 0.0);
        let far = gaussian_reference(8.0, 0.01, &grid).unwrap();
        let near = gaussian_reference(-8.0, 0.01, &grid).unwrap();
        assert_relative_eq!(l1_distance(&far, &near).unwrap(), 2.0, max_relative = 1e-6);
        let q = gaussian_reference(0.1, 1.0, &grid).unwrap();
        let closed = 2.0 * (2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.05) - 1.0);
        assert_relative_eq!(closed, 0.079_755_223_353_489_85, max_relative = 1e-12);
        // the kink of |p - q| costs the trapezoid rule a few 1e-6
        assert_relative_eq!(l1_distance(&p, &q).unwrap(), closed, max_relative = 1e-5);
        // through the estimator on 10^5 samples each
        let a = normals(6, 100_000);
        let b: Vec<f64> = normals(7, 100_000).iter().map(|x| x + 0.1).collect();
        let g = pooled_grid(&[&a, &b], DEFAULT_GRID_POINTS).unwrap();
        let tv = tv_distance_samples(&a, &b, &g).unwrap();
        assert!((2.0 * tv - closed).abs() < 0.01, "{}", 2.0 * tv);
        let other = uniform_grid(-10.0, 10.0, 11).unwrap();
        let r = gaussian_reference(0.0, 1.0, &other).unwrap();
        assert!(l1_distance(&p, &r).is_err());
    }

    proptest::proptest! {
        #[test]
        fn l1_is_a_metric(m in proptest::collection::vec((-2.0f64..2.0, 0.2f64..3.0), 3)) {
            let grid = uniform_grid(-12.0, 12.0, 513).unwrap();
            let d: Vec<_> = m.iter().map(|&(mu, v)| gaussian_reference(mu, v, &grid).unwrap()).collect();
            let ab = l1_distance(&d[0], &d[1]).unwrap();
            proptest::prop_assert_eq!(ab, l1_distance(&d[1], &d[0]).unwrap());
            let ac = l1_distance(&d[0], &d[2]).unwrap();
            let bc = l1_distance(&d[1], &d[2]).unwrap();
            proptest::prop_assert!(ac <= ab + bc + 1e-12);
            proptest::prop_assert!(ab <= 2.0 + 1e-3);
        }
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = normals(8, 500);
        let grid = pooled_grid(&[&a], 256).unwrap();
        assert_eq!(tv_distance_samples(&a, &a, &grid).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let grid = uniform_grid(-1.0, 1.0, 10).unwrap();
        assert!(kde(&[1.0; 200], Bandwidth::Auto, &grid).is_err());
        assert!(kde(&[1.0; 20], Bandwidth::Fixed(0.1), &grid).is_err());
        assert!(gaussian_reference(0.0, 0.0, &grid).is_err());
        assert!(uniform_grid(1.0, 1.0, 10).is_err());
    }

    #[test]
    fn gaussian_reference_examples() {
        let grid = [-1.0, 0.0, 2.0];
        let d = gaussian_reference(0.0, 1.0, &grid).unwrap();
        assert_relative_eq!(d.values[1], 1.0 / (2.0 * PI).sqrt(), max_relative = 1e-15);
        let s = gaussian_reference(3.0, 1.0, &[2.0, 3.0, 5.0]).unwrap();
        for (a, b) in d.values.iter().zip(&s.values) {
            assert_relative_eq!(*a, *b, max_relative = 1e-15);
        }
    }

    #[test]
    fn exact_sampler_matches_gaussian_reference() {
        let grid = GridSpec::new(1.0, 4).unwrap();
        let sampler = build_exact_sampler(grid, 0.7, 0.7, 1.0).unwrap();
        let draws: Vec<f64> = sampler.sample_paths(2, 0, 100_000).into_iter().map(|r| r[3]).collect();
        let var = GCovariance::new(0.7, 0.7, 1.0).unwrap().variance(1.0);
        let eval = pooled_grid(&[&draws], DEFAULT_GRID_POINTS).unwrap();
        let d = l1_distance(&kde(&draws, Bandwidth::Auto, &eval).unwrap(), &gaussian_reference(0.0, var, &eval).unwrap()).unwrap();
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn csv_layout() {
        let d = gaussian_reference(0.0, 1.0, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("point,value\n0e0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
