//! Gaussian kernel density mode counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 512;

/// Local maxima below this fraction of the tallest peak are ignored.
pub const DEFAULT_MIN_RELATIVE_HEIGHT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModeReport {
    pub column: String,
    pub bandwidth: f64,
    pub mode_count: usize,
    pub mode_locations: Vec<f64>,
}

impl KdeModeReport {
    pub fn is_multimodal(&self) -> bool {
        self.mode_count > 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeOptions {
    pub grid_points: usize,
    pub min_relative_height: f64,
}

impl Default for KdeOptions {
    fn default() -> Self {
        KdeOptions {
            grid_points: DEFAULT_GRID_POINTS,
            min_relative_height: DEFAULT_MIN_RELATIVE_HEIGHT,
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 min(std, IQR / 1.34) n^(-1/5)`, falling back to
/// whichever spread is nonzero. Zero for constant data.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (std > 0.0, iqr > 0.0) {
        (true, true) => std.min(iqr / 1.34),
        (true, false) => std,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Counts density modes with default options.
pub fn count_modes(values: &[f64], grid_points: usize) -> Result<KdeModeReport> {
    count_modes_with(
        "",
        values,
        KdeOptions {
            grid_points,
            ..KdeOptions::default()
        },
    )
}

/// Evaluates the KDE on a uniform grid over `[min - 3h, max + 3h]` and counts
/// strict interior local maxima at least `min_relative_height` times the
/// tallest grid value.
pub fn count_modes_with(column: &str, values: &[f64], options: KdeOptions) -> Result<KdeModeReport> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(format!("KDE input contains {bad}")));
    }
    if options.grid_points < 3 {
        return Err(Error::ConfigInvalid("KDE grid needs at least 3 points".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut h = silverman_bandwidth(values);
    if h <= 0.0 {
        // Constant data: a single spike.
        h = 1e-4 * lo.abs().max(1.0);
    }
    let start = lo - 3.0 * h;
    let step = (hi - lo + 6.0 * h) / (options.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..options.grid_points)
        .map(|i| start + step * i as f64)
        .collect();
    let density = kde_density(values, h, &grid);
    let peak = density.iter().copied().fold(0.0, f64::max);
    let mut modes = Vec::new();
    for i in 1..grid.len() - 1 {
        if density[i] > density[i - 1]
            && density[i] > density[i + 1]
            && density[i] >= options.min_relative_height * peak
        {
            modes.push(grid[i]);
        }
    }
    if modes.is_empty() {
        let i = crate::neural::argmax(&density);
        modes.push(grid[i]);
    }
    Ok(KdeModeReport {
        column: column.to_string(),
        bandwidth: h,
        mode_count: modes.len(),
        mode_locations: modes,
    })
}

/// Gaussian KDE at each grid point. Points further than 8h away are skipped.
pub fn kde_density(values: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            let from = sorted.partition_point(|&x| x < g - 8.0 * h);
            let to = sorted.partition_point(|&x| x <= g + 8.0 * h);
            sorted[from..to]
                .iter()
                .map(|&x| {
                    let z = (g - x) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn draws(n: usize, mean: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    /// Analytic mode count of a density sampled on a grid.
    fn analytic_modes(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> usize {
        let grid: Vec<f64> = (0..2001).map(|i| lo + (hi - lo) * i as f64 / 2000.0).collect();
        let d: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
        (1..d.len() - 1).filter(|&i| d[i] > d[i - 1] && d[i] > d[i + 1]).count()
    }

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn unimodal_normal() {
        assert_eq!(analytic_modes(phi, -6.0, 6.0), 1);
        let r = count_modes(&draws(10_000, 0.0, 1), 512).unwrap();
        assert_eq!(r.mode_count, 1, "{r:?}");
        assert!(r.mode_locations[0].abs() < 0.2);
    }

    #[test]
    fn separated_bimodal() {
        assert_eq!(
            analytic_modes(|x| 0.5 * phi(x + 5.0) + 0.5 * phi(x - 5.0), -10.0, 10.0),
            2
        );
        let mut xs = draws(5_000, -5.0, 2);
        xs.extend(draws(5_000, 5.0, 3));
        let r = count_modes(&xs, 512).unwrap();
        assert_eq!(r.mode_count, 2, "{r:?}");
        assert!((r.mode_locations[0] + 5.0).abs() < 0.3);
        assert!((r.mode_locations[1] - 5.0).abs() < 0.3);
    }

    #[test]
    fn constant_column_single_mode() {
        let r = count_modes(&[3.0; 50], 512).unwrap();
        assert_eq!(r.mode_count, 1);
        assert!(r.bandwidth > 0.0);
        assert!((r.mode_locations[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(count_modes(&[], 512), Err(Error::EmptyInput)));
    }

    #[test]
    fn density_integrates_to_one() {
        let xs = draws(1_000, 0.0, 4);
        let h = silverman_bandwidth(&xs);
        let grid: Vec<f64> = (0..4001).map(|i| -8.0 + 16.0 * i as f64 / 4000.0).collect();
        let d = kde_density(&xs, h, &grid);
        let integral: f64 = d.iter().sum::<f64>() * 16.0 / 4000.0;
        assert!((integral - 1.0).abs() < 1e-3);
    }
}
