//! Kernel regression of an outcome on log light: Nadaraya-Watson and local
//! polynomial fits with pointwise normal-approximation bands.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

use crate::linalg::{Matrix, Qr};
use crate::summary::{linspace, Kernel, KernelSpec, SummaryError};

pub const DEFAULT_GRID_POINTS: usize = 100;
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmoothError {
    #[error("x and y lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least two observations, got {0}")]
    TooFewPoints(usize),
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Kernel(#[from] SummaryError),
}

/// One grid point of a fitted curve. `None` marks an estimate that is not
/// identified there (no kernel mass, or a singular local system).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub fit: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Kish effective sample size of the kernel weights.
    pub n_eff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothCurve {
    pub points: Vec<CurvePoint>,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub degree: usize,
}

impl SmoothCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn fit(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.fit).collect()
    }

    pub fn defined_fits(&self) -> Vec<(f64, f64)> {
        self.points.iter().filter_map(|p| p.fit.map(|f| (p.x, f))).collect()
    }
}

/// Equally spaced points over the range of `x`.
pub fn default_grid(x: &[f64], n: usize) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    linspace(lo, hi, n)
}

pub fn nw_regress(x: &[f64], y: &[f64], spec: &KernelSpec, grid: &[f64]) -> Result<SmoothCurve, SmoothError> {
    local_poly_regress(x, y, 0, spec, grid)
}

/// Local polynomial regression of the given degree; the estimate at g is
/// the intercept of the kernel-weighted polynomial fit in `(x - g)`.
pub fn local_poly_regress(
    x: &[f64],
    y: &[f64],
    degree: usize,
    spec: &KernelSpec,
    grid: &[f64],
) -> Result<SmoothCurve, SmoothError> {
    if x.len() != y.len() {
        return Err(SmoothError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(SmoothError::TooFewPoints(x.len()));
    }
    if grid.is_empty() {
        return Err(SmoothError::EmptyGrid);
    }
    let h = spec.resolve(x)?;
    let points = grid
        .iter()
        .map(|&g| {
            let w: Vec<f64> = x.iter().map(|&xi| spec.kernel.density((g - xi) / h)).collect();
            fit_point(x, y, &w, g, h, degree)
        })
        .collect();
    Ok(SmoothCurve {
        points,
        bandwidth: h,
        kernel: spec.kernel,
        degree,
    })
}

fn fit_point(x: &[f64], y: &[f64], w: &[f64], g: f64, h: f64, degree: usize) -> CurvePoint {
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let n_eff = if sw > 0.0 { sw * sw / sw2 } else { 0.0 };
    let undefined = CurvePoint {
        x: g,
        fit: None,
        lower: None,
        upper: None,
        n_eff,
    };
    if !(sw > 0.0) {
        return undefined;
    }
    // equivalent-kernel weights l (estimate = Σ l_i y_i) and local residuals
    let (fit, l, resid) = if degree == 0 {
        let l: Vec<f64> = w.iter().map(|v| v / sw).collect();
        let m: f64 = l.iter().zip(y).map(|(a, b)| a * b).sum();
        let r: Vec<f64> = y.iter().map(|v| v - m).collect();
        (m, l, r)
    } else {
        match local_wls(x, y, w, g, h, degree) {
            Some(t) => t,
            None => return undefined,
        }
    };
    let mut pt = CurvePoint {
        fit: Some(fit),
        ..undefined
    };
    if n_eff >= 2.0 {
        let var = w.iter().zip(&resid).map(|(a, r)| a * r * r).sum::<f64>() / sw;
        let se = (var * l.iter().map(|v| v * v).sum::<f64>()).sqrt();
        pt.lower = Some(fit - Z_95 * se);
        pt.upper = Some(fit + Z_95 * se);
    }
    pt
}

// Weighted least squares on rows with positive weight, regressors
// ((x - g)/h)^k. Returns the intercept, the hat row for the intercept over
// all observations and the local residuals.
fn local_wls(x: &[f64], y: &[f64], w: &[f64], g: f64, h: f64, degree: usize) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let idx: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
    if idx.len() < degree + 1 {
        return None;
    }
    let p = degree + 1;
    let design = Matrix::from_fn(idx.len(), p, |r, k| {
        let i = idx[r];
        w[i].sqrt() * ((x[i] - g) / h).powi(k as i32)
    });
    let qr = Qr::new(&design).ok()?;
    let yw: Vec<f64> = idx.iter().map(|&i| w[i].sqrt() * y[i]).collect();
    let beta = qr.solve(&yw).ok()?;
    // intercept = e1ᵀ R⁻¹ Qᵀ W^{1/2} y, so its hat row is W^{1/2} Q R⁻ᵀ e1
    let mut e1 = vec![0.0; p];
    e1[0] = 1.0;
    let z = crate::linalg::solve_upper_transpose(&qr.r(), &e1).ok()?;
    let mut full = vec![0.0; idx.len()];
    full[..p].copy_from_slice(&z);
    let qz = qr.q_mul(&full);
    let mut l = vec![0.0; x.len()];
    for (r, &i) in idx.iter().enumerate() {
        l[i] = w[i].sqrt() * qz[r];
    }
    let resid = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let u = (xi - g) / h;
            let mut pred = 0.0;
            for b in beta.iter().rev() {
                pred = pred * u + b;
            }
            yi - pred
        })
        .collect();
    Some((beta[0], l, resid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summary::Bandwidth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn gauss(h: f64) -> KernelSpec {
        KernelSpec::fixed(Kernel::Gaussian, h).unwrap()
    }

    #[test]
    fn constant_outcome_is_reproduced() {
        let x = [0.0, 0.4, 1.1, 2.0, 3.5, 3.6, 2.9];
        let y = [2.5; 7];
        let c = nw_regress(&x, &y, &gauss(0.7), &linspace(0.0, 3.5, 9)).unwrap();
        for p in &c.points {
            assert!((p.fit.unwrap() - 2.5).abs() < 1e-12);
            // zero noise collapses the band
            assert!(p.n_eff >= 2.0);
            assert!((p.upper.unwrap() - p.lower.unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_bandwidth_gives_sample_mean() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y = [1.0, 3.0, -2.0, 6.0];
        let c = nw_regress(&x, &y, &gauss(5e6), &[0.0, 2.5, 5.0]).unwrap();
        for p in &c.points {
            assert!((p.fit.unwrap() - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_midpoint() {
        let c = nw_regress(&[0.0, 1.0], &[0.0, 1.0], &gauss(0.3), &[0.5]).unwrap();
        assert!((c.points[0].fit.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn underflow_is_flagged_not_zero() {
        let c = nw_regress(&[0.0, 1.0], &[3.0, 4.0], &gauss(0.01), &[100.0]).unwrap();
        assert_eq!(c.points[0].fit, None);
        let e = KernelSpec::fixed(Kernel::Epanechnikov, 0.5).unwrap();
        let c = nw_regress(&[0.0, 1.0], &[3.0, 4.0], &e, &[3.0]).unwrap();
        assert_eq!(c.points[0].fit, None);
    }

    #[test]
    fn degree_zero_equals_nw() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin() + rng.random_range(-0.5..0.5)).collect();
        let grid = default_grid(&x, 40);
        let spec = KernelSpec::new(Kernel::Gaussian, Bandwidth::Silverman).unwrap();
        let a = nw_regress(&x, &y, &spec, &grid).unwrap();
        // local_wls route with degree 0 forced through the QR path
        for (p, &g) in a.points.iter().zip(&grid) {
            let w: Vec<f64> = x.iter().map(|&xi| Kernel::Gaussian.density((g - xi) / a.bandwidth)).collect();
            let (m, _, _) = local_wls(&x, &y, &w, g, a.bandwidth, 0).unwrap();
            assert!((p.fit.unwrap() - m).abs() < 1e-10);
        }
        let b = local_poly_regress(&x, &y, 0, &spec, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn local_linear_reproduces_lines() {
        let x = [0.0, 0.3, 1.7, 2.2, 4.0, 4.1];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.8 * v).collect();
        for h in [0.2, 1.0, 30.0] {
            let c = local_poly_regress(&x, &y, 1, &gauss(h), &linspace(0.0, 4.0, 11)).unwrap();
            for p in &c.points {
                assert!((p.fit.unwrap() - (1.5 - 0.8 * p.x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn local_linear_matches_weighted_normal_equations() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let g = 1.5;
        let c = local_poly_regress(&x, &y, 1, &gauss(1.0), &[g]).unwrap();
        // 2x2 weighted normal equations in (1, x - g)
        let w: Vec<f64> = x.iter().map(|v| (-(v - g) * (v - g) / 2.0).exp()).collect();
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..5 {
            let d = x[i] - g;
            s0 += w[i];
            s1 += w[i] * d;
            s2 += w[i] * d * d;
            t0 += w[i] * y[i];
            t1 += w[i] * d * y[i];
        }
        let oracle = (s2 * t0 - s1 * t1) / (s0 * s2 - s1 * s1);
        assert!((c.points[0].fit.unwrap() - oracle).abs() < 1e-10);
        assert!((oracle - 2.624849044801586).abs() < 1e-12);
    }

    #[test]
    fn hat_row_reproduces_estimate() {
        let x = [0.0, 0.5, 1.0, 2.0, 2.5, 4.0, 5.0];
        let y = [1.0, 0.2, 0.7, 2.0, 1.1, 3.0, 2.2];
        let w: Vec<f64> = x.iter().map(|&v| Kernel::Gaussian.density((v - 2.0) / 1.3)).collect();
        let (m, l, _) = local_wls(&x, &y, &w, 2.0, 1.3, 2).unwrap();
        let via_l: f64 = l.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((m - via_l).abs() < 1e-12);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_local_point_is_rank_deficient() {
        let e = KernelSpec::fixed(Kernel::Epanechnikov, 0.4).unwrap();
        let c = local_poly_regress(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], 1, &e, &[1.0]).unwrap();
        assert_eq!(c.points[0].fit, None);
    }

    fn mean_band_width(c: &SmoothCurve) -> f64 {
        let w: Vec<f64> = c
            .points
            .iter()
            .filter_map(|p| Some(p.upper? - p.lower?))
            .collect();
        w.iter().sum::<f64>() / w.len() as f64
    }

    #[test]
    fn doubling_noise_doubles_band() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let spec = gauss(0.5);
        let (mut wa, mut wb) = (0.0, 0.0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..150).map(|_| rng.random_range(-3.0..3.0)).collect();
            let grid = default_grid(&x, 25);
            let noise = Normal::new(0.0, 0.5).unwrap();
            let y1: Vec<f64> = x.iter().map(|v| 0.2 * v * v + noise.sample(&mut rng)).collect();
            let y2: Vec<f64> = x.iter().map(|v| 0.2 * v * v + 2.0 * noise.sample(&mut rng)).collect();
            wa += mean_band_width(&local_poly_regress(&x, &y1, 1, &spec, &grid).unwrap());
            wb += mean_band_width(&local_poly_regress(&x, &y2, 1, &spec, &grid).unwrap());
        }
        let ratio = wb / wa;
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn u_shape_is_recovered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let noise = Normal::new(0.0, 0.6).unwrap();
        let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-8.0..3.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.08 * (v + 2.5) * (v + 2.5) - 1.0 + noise.sample(&mut rng))
            .collect();
        let grid = linspace(-7.0, 2.0, 20);
        let c = local_poly_regress(&x, &y, 1, &gauss(0.8), &grid).unwrap();
        let f: Vec<f64> = c.points.iter().map(|p| p.fit.unwrap()).collect();
        for k in 1..f.len() - 1 {
            assert!(f[k - 1] - 2.0 * f[k] + f[k + 1] > 0.0, "at {}", grid[k]);
        }
    }

    proptest! {
        #[test]
        fn nw_stays_within_outcome_range(
            pts in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 2..40),
            h in 0.05f64..5.0,
            g in -6.0f64..6.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let c = nw_regress(&x, &y, &gauss(h), &[g]).unwrap();
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = c.points[0];
            if let Some(f) = p.fit {
                prop_assert!(f >= lo - 1e-9 && f <= hi + 1e-9);
            }
            if let (Some(l), Some(u), Some(f)) = (p.lower, p.upper, p.fit) {
                prop_assert!(l <= f && f <= u);
                prop_assert!(((u - f) - (f - l)).abs() < 1e-9);
            }
        }

        #[test]
        fn weight_rescaling_leaves_fit_unchanged(
            pts in proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0), 3..30),
            scale in 1e-3f64..1e3,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let w: Vec<f64> = x.iter().map(|v| Kernel::Gaussian.density(v / 2.0)).collect();
            let ws: Vec<f64> = w.iter().map(|v| v * scale).collect();
            let a = fit_point(&x, &y, &w, 0.0, 2.0, 0);
            let b = fit_point(&x, &y, &ws, 0.0, 2.0, 0);
            prop_assert!((a.fit.unwrap() - b.fit.unwrap()).abs() < 1e-9);
            match (a.upper, b.upper) {
                (Some(u), Some(v)) => prop_assert!((u - v).abs() < 1e-9),
                (u, v) => prop_assert_eq!(u, v),
            }
        }
    }
}
