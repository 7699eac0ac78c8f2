//! Descriptive statistics and kernel density estimation.

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SummaryError {
    #[error("need at least {needed} observations, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("data have zero variance")]
    ZeroVariance,
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("data contain a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Set when the data are constant; skewness and kurtosis are then
    /// reported as zero.
    pub degenerate: bool,
}

/// Two-pass moments: the mean first, then central sums.
pub fn summary_stats(x: &[f64]) -> Result<SummaryStats, SummaryError> {
    let n = x.len();
    if n < 2 {
        return Err(SummaryError::TooFewPoints { needed: 2, found: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SummaryError::NonFinite);
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let std_dev = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let degenerate = m2 == 0.0 || min == max;
    let (skewness, excess_kurtosis) = if degenerate {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok(SummaryStats {
        n,
        mean,
        std_dev: if degenerate { 0.0 } else { std_dev },
        min,
        max,
        skewness,
        excess_kurtosis,
        degenerate,
    })
}

/// Linear-interpolation sample quantile (R type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Silverman's rule of thumb `0.9 min(sd, IQR/1.34) n^(-1/5)`. A zero IQR
/// falls back to the standard deviation.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64, SummaryError> {
    let stats = summary_stats(x)?;
    if stats.degenerate {
        return Err(SummaryError::ZeroVariance);
    }
    let sorted = sorted_copy(x);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 {
        stats.std_dev.min(iqr / 1.34)
    } else {
        stats.std_dev
    };
    Ok(0.9 * spread * (x.len() as f64).powf(-0.2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// Kernel density at standardized distance `u`; integrates to one.
    #[inline]
    pub fn density(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    Silverman,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelSpec {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, bandwidth: Bandwidth) -> Result<Self, SummaryError> {
        if let Bandwidth::Fixed(h) = bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(SummaryError::InvalidBandwidth(h));
            }
        }
        Ok(Self { kernel, bandwidth })
    }

    pub fn fixed(kernel: Kernel, h: f64) -> Result<Self, SummaryError> {
        Self::new(kernel, Bandwidth::Fixed(h))
    }

    /// Numeric bandwidth for this sample.
    pub fn resolve(&self, x: &[f64]) -> Result<f64, SummaryError> {
        match self.bandwidth {
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
            Bandwidth::Fixed(h) => Err(SummaryError::InvalidBandwidth(h)),
            Bandwidth::Silverman => silverman_bandwidth(x),
        }
    }
}

/// Kernel density estimate of `x` evaluated on `grid`.
pub fn kde(x: &[f64], spec: &KernelSpec, grid: &[f64]) -> Result<Vec<f64>, SummaryError> {
    if grid.is_empty() {
        return Err(SummaryError::EmptyGrid);
    }
    if x.is_empty() {
        return Err(SummaryError::TooFewPoints { needed: 1, found: 0 });
    }
    let h = spec.resolve(x)?;
    let norm = 1.0 / (x.len() as f64 * h);
    Ok(grid
        .iter()
        .map(|&g| norm * x.iter().map(|&xi| spec.kernel.density((g - xi) / h)).sum::<f64>())
        .collect())
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Composite trapezoid rule over an increasing grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}
