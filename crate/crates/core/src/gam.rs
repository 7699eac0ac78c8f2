//! Additive models with one penalized cubic regression spline in log light
//! plus parametric covariates, Gaussian family with identity link.
//!
//! The spline uses the value-at-knot parameterization: coefficients are the
//! function values at the knots, second derivatives follow from the natural
//! end conditions, and the penalty is `∫ f''(t)² dt`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

use crate::linalg::{cholesky, dot, solve_upper, symmetric_eigen, upper_inverse, LinalgError, Matrix, Qr};
use crate::linear_models::{build_design, ModelError, RegressionSpec, Term};
use crate::panel::AnalysisPanel;
use crate::special::{f_sf, t_two_sided};

pub const DEFAULT_BASIS_DIM: usize = 10;
pub const LOG10_LAMBDA_RANGE: (f64, f64) = (-12.0, 12.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GamError {
    #[error("basis dimension must be at least 4, got {0}")]
    BasisTooSmall(usize),
    #[error("knots must be strictly increasing (knot {0})")]
    DuplicateKnots(usize),
    #[error("need {needed} distinct values of the smoothed variable, found {found}")]
    TooFewDistinct { needed: usize, found: usize },
    #[error("smoothing parameter must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("influence trace {trace} reaches n = {n}; selection score undefined")]
    ScoreUndefined { trace: f64, n: usize },
    #[error("design is not identifiable: column `{0}` is collinear")]
    NotIdentifiable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Cubic regression spline on fixed knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CrSpline {
    knots: Vec<f64>,
    // maps knot values to knot second derivatives (zero first and last rows)
    f: Matrix,
    s: Matrix,
}

impl CrSpline {
    pub fn new(knots: &[f64]) -> Result<Self, GamError> {
        let k = knots.len();
        if k < 4 {
            return Err(GamError::BasisTooSmall(k));
        }
        if let Some(i) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(GamError::DuplicateKnots(i + 1));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut d = Matrix::zeros(k - 2, k);
        let mut b = Matrix::zeros(k - 2, k - 2);
        for i in 0..k - 2 {
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < k - 2 {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
        }
        let l = cholesky(&b)?;
        let lt = l.transpose();
        // B⁻¹D column by column through the Cholesky factor
        let mut binv_d = Matrix::zeros(k - 2, k);
        for j in 0..k {
            let col = d.column(j);
            let z = crate::linalg::solve_upper_transpose(&lt, &col)?;
            let x = solve_upper(&lt, &z)?;
            for i in 0..k - 2 {
                binv_d[(i, j)] = x[i];
            }
        }
        let mut f = Matrix::zeros(k, k);
        for i in 0..k - 2 {
            for j in 0..k {
                f[(i + 1, j)] = binv_d[(i, j)];
            }
        }
        let mut s = d.transpose().matmul(&binv_d)?;
        // symmetrize rounding
        for i in 0..k {
            for j in 0..i {
                let m = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = m;
                s[(j, i)] = m;
            }
        }
        Ok(Self {
            knots: knots.to_vec(),
            f,
            s,
        })
    }

    /// Knots spread evenly through the sorted distinct values of `x`.
    pub fn with_quantile_knots(x: &[f64], k: usize) -> Result<Self, GamError> {
        if k < 4 {
            return Err(GamError::BasisTooSmall(k));
        }
        let mut u = x.to_vec();
        u.sort_by(|a, b| a.total_cmp(b));
        u.dedup();
        if u.len() < k {
            return Err(GamError::TooFewDistinct {
                needed: k,
                found: u.len(),
            });
        }
        let m = u.len() - 1;
        let knots: Vec<f64> = (0..k)
            .map(|i| {
                let pos = i as f64 * m as f64 / (k - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                if lo >= m {
                    u[m]
                } else {
                    u[lo] + frac * (u[lo + 1] - u[lo])
                }
            })
            .collect();
        Self::new(&knots)
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn penalty(&self) -> &Matrix {
        &self.s
    }

    /// Second derivatives at the knots implied by knot values `beta`.
    pub fn knot_second_derivatives(&self, beta: &[f64]) -> Vec<f64> {
        self.f.matvec(beta).unwrap_or_default()
    }

    /// Basis row at `x`; outside the knot range the spline continues linearly.
    pub fn basis_row(&self, x: f64) -> Vec<f64> {
        let k = self.dim();
        let kn = &self.knots;
        let mut row = vec![0.0; k];
        if x < kn[0] || x > kn[k - 1] {
            // f(edge) + f'(edge)(x - edge)
            let (j, edge) = if x < kn[0] { (0, kn[0]) } else { (k - 2, kn[k - 1]) };
            let h = kn[j + 1] - kn[j];
            let at_left = x < kn[0];
            let value = self.interval_row(j, edge);
            // derivative of the interval polynomial at the edge
            let mut deriv = vec![0.0; k];
            deriv[j] -= 1.0 / h;
            deriv[j + 1] += 1.0 / h;
            let (cm, cp) = if at_left { (-h / 3.0, -h / 6.0) } else { (h / 6.0, h / 3.0) };
            for c in 0..k {
                deriv[c] += cm * self.f[(j, c)] + cp * self.f[(j + 1, c)];
            }
            for c in 0..k {
                row[c] = value[c] + deriv[c] * (x - edge);
            }
            return row;
        }
        let j = match kn.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(k - 2),
            Err(i) => i - 1,
        };
        self.interval_row(j, x)
    }

    fn interval_row(&self, j: usize, x: f64) -> Vec<f64> {
        let k = self.dim();
        let (x0, x1) = (self.knots[j], self.knots[j + 1]);
        let h = x1 - x0;
        let am = (x1 - x) / h;
        let ap = (x - x0) / h;
        let cm = ((x1 - x).powi(3) / h - h * (x1 - x)) / 6.0;
        let cp = ((x - x0).powi(3) / h - h * (x - x0)) / 6.0;
        let mut row = vec![0.0; k];
        row[j] += am;
        row[j + 1] += ap;
        for c in 0..k {
            row[c] += cm * self.f[(j, c)] + cp * self.f[(j + 1, c)];
        }
        row
    }

    pub fn basis(&self, x: &[f64]) -> Matrix {
        let k = self.dim();
        let mut m = Matrix::zeros(x.len(), k);
        for (i, &v) in x.iter().enumerate() {
            for (c, b) in self.basis_row(v).into_iter().enumerate() {
                m[(i, c)] = b;
            }
        }
        m
    }
}

/// Basis matrix and penalty for `k` knots placed through the data.
pub fn spline_basis(x: &[f64], k: usize) -> Result<(Matrix, Matrix), GamError> {
    let sp = CrSpline::with_quantile_knots(x, k)?;
    Ok((sp.basis(x), sp.penalty().clone()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Gcv,
    /// Needs the error variance σ².
    Ubre { sigma2: f64 },
}

impl Criterion {
    pub fn label(self) -> &'static str {
        match self {
            Self::Gcv => "GCV",
            Self::Ubre { .. } => "UBRE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Auto(Criterion),
}

/// The smooth in a fitted model, after the sum-to-zero constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTerm {
    pub name: String,
    pub k: usize,
    pub spline: CrSpline,
    /// Maps constrained coefficients to knot values (k × (k - 1)).
    pub z: Matrix,
    /// Multiplier applied to `ZᵀSZ` before λ.
    pub penalty_scale: f64,
    pub lambda: f64,
    /// Trace of the smooth's block of the influence matrix, plus one for the
    /// constant absorbed by the centering constraint; lies in [2, k].
    pub edf: f64,
    pub coefficients: Vec<f64>,
    // coefficient positions in the full model
    cols: (usize, usize),
}

impl SmoothTerm {
    pub fn constrained_basis(&self, x: &[f64]) -> Matrix {
        self.spline
            .basis(x)
            .matmul(&self.z)
            .expect("basis and constraint are conformable")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamFit {
    /// Intercept and parametric terms.
    pub terms: Vec<Term>,
    pub smooth: Option<SmoothTerm>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub tss: f64,
    pub n: usize,
    pub edf_total: f64,
    pub sigma2: f64,
    pub adj_r_squared: f64,
    /// Gaussian log-likelihood at the ML scale RSS/n.
    pub log_likelihood: f64,
    pub deviance_explained: f64,
    /// Criterion and its value at the chosen λ (automatic selection only).
    pub score: Option<(Criterion, f64)>,
    /// `(log10 λ, score)` pairs visited during selection.
    pub score_trace: Vec<(f64, f64)>,
    /// Bayesian posterior covariance of all coefficients.
    pub covariance: Matrix,
}

/// Demmler-Reinsch form of a penalized least-squares problem: with X = QR
/// and R⁻ᵀSR⁻¹ = UΛUᵀ, every quantity at a given λ is a diagonal scaling.
struct Reparam {
    n: usize,
    r: Matrix,
    rinv: Matrix,
    u: Matrix,
    eig: Vec<f64>,
    // Uᵀ Qᵀ y (leading p entries)
    g: Vec<f64>,
    // ‖y‖² minus the part explained by span(X)
    outside: f64,
}

impl Reparam {
    fn new(x: &Matrix, s: &Matrix, y: &[f64], names: &[String]) -> Result<Self, GamError> {
        let qr = Qr::new(x).map_err(|e| match e {
            LinalgError::RankDeficient { column } => GamError::NotIdentifiable(names[column].clone()),
            other => other.into(),
        })?;
        let p = x.ncols();
        let r = qr.r();
        let rinv = upper_inverse(&r);
        let m = rinv.transpose().matmul(s)?.matmul(&rinv)?;
        let (mut eig, u) = symmetric_eigen(&m);
        // null-space eigenvalues come back as rounding noise
        let top = eig.iter().fold(0.0f64, |a, &b| a.max(b));
        for e in eig.iter_mut() {
            if *e < top * 1e-11 {
                *e = 0.0;
            }
        }
        let qty = qr.qt_mul(y);
        let f = &qty[..p];
        let g = u.tr_matvec(f)?;
        let outside = qty[p..].iter().map(|v| v * v).sum();
        Ok(Self {
            n: y.len(),
            r,
            rinv,
            u,
            eig,
            g,
            outside,
        })
    }

    fn shrink(&self, lambda: f64) -> Vec<f64> {
        self.eig.iter().map(|e| 1.0 / (1.0 + lambda * e)).collect()
    }

    fn trace(&self, lambda: f64) -> f64 {
        self.shrink(lambda).iter().sum()
    }

    fn rss(&self, lambda: f64) -> f64 {
        let d = self.shrink(lambda);
        self.outside
            + self
                .g
                .iter()
                .zip(&d)
                .map(|(g, d)| {
                    let v = g * (1.0 - d);
                    v * v
                })
                .sum::<f64>()
    }

    fn score(&self, lambda: f64, c: Criterion) -> Result<f64, GamError> {
        let n = self.n as f64;
        let t = self.trace(lambda);
        let rss = self.rss(lambda);
        match c {
            Criterion::Gcv => {
                if t >= n {
                    return Err(GamError::ScoreUndefined { trace: t, n: self.n });
                }
                Ok(n * rss / ((n - t) * (n - t)))
            }
            Criterion::Ubre { sigma2 } => Ok(rss / n - sigma2 + 2.0 * sigma2 * t / n),
        }
    }

    fn coefficients(&self, lambda: f64) -> Vec<f64> {
        let d = self.shrink(lambda);
        let dg: Vec<f64> = self.g.iter().zip(&d).map(|(g, d)| g * d).collect();
        let v = self.u.matvec(&dg).expect("conformable");
        self.rinv.matvec(&v).expect("conformable")
    }

    /// `(XᵀX + λS)⁻¹ = R⁻¹ U D Uᵀ R⁻ᵀ`.
    fn inverse(&self, lambda: f64) -> Matrix {
        let d = self.shrink(lambda);
        let a = self.rinv.matmul(&self.u).expect("conformable");
        let p = a.nrows();
        Matrix::from_fn(p, p, |i, j| (0..p).map(|k| a[(i, k)] * d[k] * a[(j, k)]).sum())
    }

    /// Diagonal of `(XᵀX + λS)⁻¹XᵀX = R⁻¹ U D Uᵀ R`, summed over `cols`.
    fn block_trace(&self, lambda: f64, cols: (usize, usize)) -> f64 {
        let d = self.shrink(lambda);
        let a = self.rinv.matmul(&self.u).expect("conformable");
        let b = self.u.transpose().matmul(&self.r).expect("conformable");
        let p = a.nrows();
        (cols.0..cols.1)
            .map(|j| (0..p).map(|k| a[(j, k)] * d[k] * b[(k, j)]).sum::<f64>())
            .sum()
    }
}

// Householder reflection taking the constraint vector to a multiple of e1;
// its trailing k - 1 columns span the constraint's null space.
fn sum_to_zero_basis(c: &[f64]) -> Matrix {
    let k = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let alpha = if c[0] >= 0.0 { -norm } else { norm };
    let mut v = c.to_vec();
    v[0] -= alpha;
    let vtv: f64 = v.iter().map(|t| t * t).sum();
    Matrix::from_fn(k, k - 1, |i, j| {
        let col = j + 1;
        let id = if i == col { 1.0 } else { 0.0 };
        id - 2.0 * v[i] * v[col] / vtv
    })
}

/// Inputs for a model with an intercept, optional parametric columns and an
/// optional smooth of one variable.
#[derive(Debug, Clone)]
pub struct GamInput<'a> {
    pub y: &'a [f64],
    pub parametric: Option<(&'a Matrix, &'a [String])>,
    pub smooth: Option<(&'a [f64], &'a str, usize)>,
}

pub fn fit_gam_input(input: &GamInput<'_>, lambda: LambdaChoice) -> Result<GamFit, GamError> {
    if let LambdaChoice::Fixed(l) = lambda {
        if !(l >= 0.0) {
            return Err(GamError::NegativeLambda(l));
        }
    }
    let y = input.y;
    let n = y.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names = vec!["(Intercept)".to_string()];
    let mut smooth_parts = None;
    if let Some((xs, name, k)) = input.smooth {
        let spline = CrSpline::with_quantile_knots(xs, k)?;
        let b = spline.basis(xs);
        let csum: Vec<f64> = (0..k).map(|j| b.column(j).iter().sum()).collect();
        let z = sum_to_zero_basis(&csum);
        let xz = b.matmul(&z)?;
        let sz = z.transpose().matmul(spline.penalty())?.matmul(&z)?;
        let scale = xz.gram().max_abs_row_sum() / sz.max_abs_row_sum();
        let start = cols.len();
        for j in 0..k - 1 {
            cols.push(xz.column(j));
            names.push(alloc::format!("s({name}).{}", j + 1));
        }
        smooth_parts = Some((spline, z, sz, scale, (start, start + k - 1), name.to_string(), k));
    }
    if let Some((xp, pn)) = input.parametric {
        for j in 0..xp.ncols() {
            cols.push(xp.column(j));
            names.push(pn[j].clone());
        }
    }
    let x = Matrix::from_columns(&cols)?;
    let p = x.ncols();
    let mut s = Matrix::zeros(p, p);
    if let Some((_, _, sz, scale, (a, _), _, k)) = &smooth_parts {
        for i in 0..k - 1 {
            for j in 0..k - 1 {
                s[(a + i, a + j)] = scale * sz[(i, j)];
            }
        }
    }
    let rp = Reparam::new(&x, &s, y, &names)?;
    let (lam, score, trace) = match (lambda, &smooth_parts) {
        (LambdaChoice::Fixed(l), _) => (l, None, Vec::new()),
        (LambdaChoice::Auto(_), None) => (0.0, None, Vec::new()),
        (LambdaChoice::Auto(c), Some(_)) => {
            let (l, sc, tr) = select_lambda(&rp, c)?;
            (l, Some((c, sc)), tr)
        }
    };
    let beta = rp.coefficients(lam);
    let fitted = x.matvec(&beta)?;
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss = dot(&residuals, &residuals);
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let edf_total = rp.trace(lam);
    let nf = n as f64;
    let df_resid = nf - edf_total;
    let sigma2 = rss / df_resid;
    let mut cov = rp.inverse(lam);
    cov.scale(sigma2);
    let smooth = smooth_parts.map(|(spline, z, _, scale, range, name, k)| SmoothTerm {
        name,
        k,
        spline,
        z,
        penalty_scale: scale,
        lambda: lam,
        edf: rp.block_trace(lam, range) + 1.0,
        coefficients: beta[range.0..range.1].to_vec(),
        cols: range,
    });
    let skip = smooth.as_ref().map(|s| s.cols);
    let terms = names
        .iter()
        .enumerate()
        .filter(|(j, _)| skip.is_none_or(|(a, b)| *j < a || *j >= b))
        .map(|(j, name)| {
            let se = cov[(j, j)].sqrt();
            let t = beta[j] / se;
            Term {
                name: name.clone(),
                estimate: beta[j],
                std_error: se,
                t_value: t,
                p_value: t_two_sided(t, df_resid),
            }
        })
        .collect();
    let ml_s2 = rss / nf;
    Ok(GamFit {
        terms,
        smooth,
        fitted,
        residuals,
        rss,
        tss,
        n,
        edf_total,
        sigma2,
        adj_r_squared: 1.0 - (rss / df_resid) / (tss / (nf - 1.0)),
        log_likelihood: -0.5 * nf * ((2.0 * core::f64::consts::PI * ml_s2).ln() + 1.0),
        deviance_explained: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        score,
        score_trace: trace,
        covariance: cov,
    })
}

// Grid over log10 λ at half-decade steps, then golden section between the
// neighbours of the best grid point.
fn select_lambda(rp: &Reparam, c: Criterion) -> Result<(f64, f64, Vec<(f64, f64)>), GamError> {
    let (lo, hi) = LOG10_LAMBDA_RANGE;
    let steps = 48;
    let mut trace = Vec::with_capacity(steps + 40);
    let mut best = (f64::INFINITY, lo);
    for i in 0..=steps {
        let l = lo + (hi - lo) * i as f64 / steps as f64;
        let s = rp.score(10f64.powf(l), c)?;
        trace.push((l, s));
        if s < best.0 {
            best = (s, l);
        }
    }
    let step = (hi - lo) / steps as f64;
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = rp.score(10f64.powf(x1), c)?;
    let mut f2 = rp.score(10f64.powf(x2), c)?;
    while b - a > 1e-6 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = rp.score(10f64.powf(x1), c)?;
            trace.push((x1, f1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = rp.score(10f64.powf(x2), c)?;
            trace.push((x2, f2));
        }
    }
    let (l, s) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let (l, s) = if s <= best.0 { (l, s) } else { (best.1, best.0) };
    Ok((10f64.powf(l), s, trace))
}

/// What to fit from a panel: the parametric part follows a regression spec
/// (its light polynomial is replaced by the smooth).
#[derive(Debug, Clone, PartialEq)]
pub struct GamSpec {
    pub regression: RegressionSpec,
    /// `None` fits the parametric part only.
    pub smooth_k: Option<usize>,
    pub lambda: LambdaChoice,
}

pub fn fit_gam(panel: &AnalysisPanel, spec: &GamSpec) -> Result<GamFit, GamError> {
    with_panel_input(panel, spec, |input| fit_gam_input(input, spec.lambda))
}

/// [`fit_gam`] followed by [`smooth_significance`] on the same design.
pub fn fit_gam_tested(panel: &AnalysisPanel, spec: &GamSpec) -> Result<(GamFit, Option<SmoothTest>), GamError> {
    with_panel_input(panel, spec, |input| {
        let fit = fit_gam_input(input, spec.lambda)?;
        let test = smooth_significance(&fit, input)?;
        Ok((fit, test))
    })
}

fn with_panel_input<T>(
    panel: &AnalysisPanel,
    spec: &GamSpec,
    f: impl FnOnce(&GamInput<'_>) -> Result<T, GamError>,
) -> Result<T, GamError> {
    let d = build_design(panel, &spec.regression)?;
    let light = panel.log_light();
    let degree = spec.regression.degree;
    let smoothing = spec.smooth_k.is_some();
    // with a smooth the polynomial columns are dropped
    let keep: Vec<usize> = (0..d.x.ncols()).filter(|&j| !smoothing || j >= degree).collect();
    let xp = d.x.select_columns(&keep);
    let pn: Vec<String> = keep.iter().map(|&j| d.names[j].clone()).collect();
    let input = GamInput {
        y: &d.y,
        parametric: (!keep.is_empty()).then_some((&xp, pn.as_slice())),
        smooth: spec.smooth_k.map(|k| (light.as_slice(), "light", k)),
    };
    f(&input)
}

/// Trace of the smooth block (plus the absorbed constant).
pub fn edf(fit: &GamFit) -> Option<f64> {
    fit.smooth.as_ref().map(|s| s.edf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothTest {
    pub edf: f64,
    /// Numerator df of the approximate F test, edf - 2.
    pub ref_df: f64,
    pub f: f64,
    pub p_value: f64,
}

/// Approximate F test of the smooth against its affine restriction (the
/// same model with the smooth replaced by a linear term). `None` when the
/// smooth is already effectively linear.
pub fn smooth_significance(fit: &GamFit, input: &GamInput<'_>) -> Result<Option<SmoothTest>, GamError> {
    let Some(s) = &fit.smooth else {
        return Ok(None);
    };
    if s.edf <= 2.0 + 1e-6 {
        return Ok(None);
    }
    let Some((xs, name, _)) = input.smooth else {
        return Ok(None);
    };
    let n = input.y.len();
    let mut cols = vec![xs.to_vec()];
    let mut names = vec![name.to_string()];
    if let Some((xp, pn)) = input.parametric {
        for j in 0..xp.ncols() {
            cols.push(xp.column(j));
            names.push(pn[j].clone());
        }
    }
    let xr = Matrix::from_columns(&cols)?;
    let restricted = crate::linear_models::ols(&xr, input.y, &names, true)?;
    let df1 = s.edf - 2.0;
    let df2 = n as f64 - fit.edf_total;
    let f = ((restricted.rss - fit.rss).max(0.0) / df1) / (fit.rss / df2);
    Ok(Some(SmoothTest {
        edf: s.edf,
        ref_df: df1,
        f,
        p_value: f_sf(f, df1, df2),
    }))
}

/// Extra percentage points of deviance explained by `with` over `without`.
pub fn deviance_delta(with: &GamFit, without: &GamFit) -> f64 {
    100.0 * (with.deviance_explained - without.deviance_explained)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothPoint {
    pub x: f64,
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

/// The centered smooth on a grid with a pointwise 95% band from the
/// posterior covariance.
pub fn smooth_curve(fit: &GamFit, grid: &[f64]) -> Option<Vec<SmoothPoint>> {
    let s = fit.smooth.as_ref()?;
    let b = s.constrained_basis(grid);
    let (a, e) = s.cols;
    Some(
        grid.iter()
            .enumerate()
            .map(|(i, &x)| {
                let row = b.row(i);
                let f = dot(row, &s.coefficients);
                let mut v = 0.0;
                for p in 0..e - a {
                    for q in 0..e - a {
                        v += row[p] * fit.covariance[(a + p, a + q)] * row[q];
                    }
                }
                let se = v.max(0.0).sqrt();
                SmoothPoint {
                    x,
                    fit: f,
                    lower: f - 1.96 * se,
                    upper: f + 1.96 * se,
                }
            })
            .collect(),
    )
}
