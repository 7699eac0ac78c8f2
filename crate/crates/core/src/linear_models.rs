//! Polynomial least squares on the analysis panel: orthonormal light
//! polynomials, pooled OLS, cluster fixed effects and nested ANOVA.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

use crate::data::{Covariate, Outcome};
use crate::linalg::{dot, norm2, LinalgError, Matrix, Qr, RANK_TOL};
use crate::panel::{AnalysisPanel, PanelError};
use crate::special::{f_sf, t_two_sided};

pub const MAX_DEGREE: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("polynomial degree {0} outside 1..=5")]
    InvalidDegree(usize),
    #[error("need at least {needed} distinct regressor values, found {found}")]
    InsufficientDistinct { needed: usize, found: usize },
    #[error("design is rank deficient: column `{column}` is collinear with earlier columns")]
    RankDeficient { column: String },
    #[error("no residual degrees of freedom (n = {n}, parameters = {params})")]
    NoResidualDf { n: usize, params: usize },
    #[error("fixed effects need at least two clusters, found {0}")]
    TooFewClusters(usize),
    #[error("every regressor is absorbed by the cluster effects")]
    AllAbsorbed,
    #[error("models are not nested at row {row}")]
    NotNested { row: usize },
    #[error("anova needs at least two models")]
    TooFewModels,
    #[error("cluster-robust errors need a cluster index")]
    MissingClusters,
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Orthonormal polynomial basis built by the Stieltjes three-term recurrence.
///
/// The recurrence coefficients are kept so the basis can be evaluated at new
/// points (prediction grids).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoPoly {
    alpha: Vec<f64>,
    // squared norms of the monic polynomials p_0..p_degree on the data
    norms2: Vec<f64>,
}

impl OrthoPoly {
    pub fn fit(x: &[f64], degree: usize) -> Result<Self, ModelError> {
        if degree == 0 {
            return Err(ModelError::InvalidDegree(degree));
        }
        let distinct = count_distinct(x);
        if distinct < degree + 1 {
            return Err(ModelError::InsufficientDistinct {
                needed: degree + 1,
                found: distinct,
            });
        }
        let n = x.len();
        let mut alpha = Vec::with_capacity(degree);
        let mut norms2 = Vec::with_capacity(degree + 1);
        let mut prev = vec![0.0; n];
        let mut cur = vec![1.0; n];
        norms2.push(n as f64);
        for k in 0..degree {
            let nk = norms2[k];
            let a = x.iter().zip(&cur).map(|(xi, p)| xi * p * p).sum::<f64>() / nk;
            let b = if k == 0 { 0.0 } else { nk / norms2[k - 1] };
            let next: Vec<f64> = (0..n).map(|i| (x[i] - a) * cur[i] - b * prev[i]).collect();
            let nn = dot(&next, &next);
            let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            if nn <= (RANK_TOL * scale.powi(k as i32 + 1)).powi(2) * n as f64 {
                return Err(ModelError::RankDeficient { column: poly_name(k + 1) });
            }
            alpha.push(a);
            norms2.push(nn);
            prev = cur;
            cur = next;
        }
        Ok(Self { alpha, norms2 })
    }

    pub fn degree(&self) -> usize {
        self.alpha.len()
    }

    /// Basis columns (excluding the constant) at the given points.
    pub fn eval(&self, x: &[f64]) -> Matrix {
        let d = self.degree();
        let mut out = Matrix::zeros(x.len(), d);
        for (i, &xi) in x.iter().enumerate() {
            let mut prev = 0.0;
            let mut cur = 1.0;
            for k in 0..d {
                let b = if k == 0 { 0.0 } else { self.norms2[k] / self.norms2[k - 1] };
                let next = (xi - self.alpha[k]) * cur - b * prev;
                out[(i, k)] = next / self.norms2[k + 1].sqrt();
                prev = cur;
                cur = next;
            }
        }
        out
    }
}

fn count_distinct(x: &[f64]) -> usize {
    let mut s: Vec<f64> = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s.dedup();
    s.len()
}

/// `degree` orthonormal columns, each orthogonal to the constant vector.
///
/// The recurrence output is passed once more through modified Gram-Schmidt
/// to clean up rounding, so the Gram matrix is the identity to ~1e-14.
pub fn ortho_poly_basis(x: &[f64], degree: usize) -> Result<Matrix, ModelError> {
    let poly = OrthoPoly::fit(x, degree)?;
    let n = x.len();
    let raw = poly.eval(x);
    let q0 = 1.0 / (n as f64).sqrt();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(degree);
    for k in 0..degree {
        let mut v = raw.column(k);
        let c: f64 = v.iter().sum::<f64>() * q0;
        v.iter_mut().for_each(|vi| *vi -= c * q0);
        for q in &cols {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
        }
        let nv = norm2(&v);
        v.iter_mut().for_each(|vi| *vi /= nv);
        cols.push(v);
    }
    Ok(Matrix::from_columns(&cols)?)
}

/// Raw powers `x, x², …, x^degree`.
pub fn raw_poly_basis(x: &[f64], degree: usize) -> Matrix {
    Matrix::from_fn(x.len(), degree, |i, j| x[i].powi(j as i32 + 1))
}

fn poly_name(k: usize) -> String {
    if k == 1 {
        "light".to_string()
    } else {
        format!("light^{k}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolyBasis {
    #[default]
    Orthonormal,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeKind {
    #[default]
    Classical,
    /// CR1: sandwich over clusters with the G/(G-1)·(n-1)/(n-p) correction.
    ClusterRobust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub outcome: Outcome,
    pub degree: usize,
    pub covariates: Vec<Covariate>,
    pub year_dummy: bool,
    pub fixed_effects: bool,
    pub basis: PolyBasis,
    pub se: SeKind,
}

impl RegressionSpec {
    pub fn new(outcome: Outcome, degree: usize) -> Result<Self, ModelError> {
        if !(1..=MAX_DEGREE).contains(&degree) {
            return Err(ModelError::InvalidDegree(degree));
        }
        Ok(Self {
            outcome,
            degree,
            covariates: Vec::new(),
            year_dummy: false,
            fixed_effects: false,
            basis: PolyBasis::Orthonormal,
            se: SeKind::Classical,
        })
    }

    /// Light polynomial plus the benchmark controls and a survey-year dummy.
    pub fn benchmark(outcome: Outcome, degree: usize) -> Result<Self, ModelError> {
        let mut s = Self::new(outcome, degree)?;
        s.covariates = Covariate::BENCHMARK.to_vec();
        s.year_dummy = true;
        Ok(s)
    }

    pub fn with_covariates(mut self, covariates: &[Covariate]) -> Self {
        self.covariates = covariates.to_vec();
        self
    }

    pub fn with_year_dummy(mut self, on: bool) -> Self {
        self.year_dummy = on;
        self
    }

    pub fn with_fixed_effects(mut self, on: bool) -> Self {
        self.fixed_effects = on;
        self
    }

    pub fn with_basis(mut self, basis: PolyBasis) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_se(mut self, se: SeKind) -> Self {
        self.se = se;
        self
    }
}

/// Regressors for a spec, without the intercept.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: Matrix,
    pub names: Vec<String>,
    pub y: Vec<f64>,
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
}

pub fn build_design(panel: &AnalysisPanel, spec: &RegressionSpec) -> Result<Design, ModelError> {
    if !(1..=MAX_DEGREE).contains(&spec.degree) {
        return Err(ModelError::InvalidDegree(spec.degree));
    }
    let y = panel.outcome(spec.outcome)?;
    let light = panel.log_light();
    let poly = match spec.basis {
        PolyBasis::Orthonormal => ortho_poly_basis(&light, spec.degree)?,
        PolyBasis::Raw => raw_poly_basis(&light, spec.degree),
    };
    let mut cols: Vec<Vec<f64>> = (0..spec.degree).map(|k| poly.column(k)).collect();
    let mut names: Vec<String> = (1..=spec.degree).map(poly_name).collect();
    for &c in &spec.covariates {
        cols.push(panel.covariate(c)?);
        names.push(c.name().to_string());
    }
    if spec.year_dummy {
        let years = panel.survey_years();
        for &yr in panel.years.iter().skip(1) {
            cols.push(years.iter().map(|&v| if v == yr { 1.0 } else { 0.0 }).collect());
            names.push(format!("year_{yr}"));
        }
    }
    Ok(Design {
        x: Matrix::from_columns(&cols)?,
        names,
        y,
        clusters: panel.cluster_index(),
        n_clusters: panel.n_clusters(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub terms: Vec<Term>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub f_stat: f64,
    pub f_df: (usize, usize),
    pub f_p_value: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub rss: f64,
    pub n: usize,
    pub df_resid: usize,
    pub sigma2: f64,
    pub covariance: Matrix,
    pub se_kind: SeKind,
    /// Number of absorbed cluster effects (0 for pooled fits).
    pub absorbed_clusters: usize,
    /// Regressors dropped because they do not vary within clusters.
    pub dropped: Vec<String>,
    /// R² of the explicit-dummy parameterization, for fixed-effects fits.
    pub lsdv_r_squared: Option<f64>,
    /// Degrees of freedom of the t reference: residual df, or G - 1 for
    /// cluster-robust errors.
    pub ref_df: f64,
}

impl FitResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.estimate).collect()
    }

    /// Two-sided confidence interval using the t reference the p-values used.
    pub fn conf_int(&self, name: &str, level: f64) -> Option<(f64, f64)> {
        let t = self.term(name)?;
        let df = self.ref_df;
        let q = crate::special::t_quantile(0.5 + level / 2.0, df);
        Some((t.estimate - q * t.std_error, t.estimate + q * t.std_error))
    }
}

struct LsOptions<'a> {
    intercept: bool,
    se: SeKind,
    clusters: Option<&'a [usize]>,
    absorbed: usize,
    // total sum of squares used for R², already about the right center
    tss: f64,
}

/// Least squares on an explicit design. Column names are used in errors and
/// in the term table; an intercept column is prepended when requested.
pub fn ols(x: &Matrix, y: &[f64], names: &[String], intercept: bool) -> Result<FitResult, ModelError> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss = if intercept {
        y.iter().map(|v| (v - mean) * (v - mean)).sum()
    } else {
        dot(y, y)
    };
    least_squares(
        x,
        y,
        names,
        &LsOptions {
            intercept,
            se: SeKind::Classical,
            clusters: None,
            absorbed: 0,
            tss,
        },
    )
}

fn least_squares(x: &Matrix, y: &[f64], names: &[String], o: &LsOptions) -> Result<FitResult, ModelError> {
    let n = y.len();
    if x.nrows() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: x.nrows(),
        }
        .into());
    }
    let (xd, all_names) = if o.intercept {
        let ones = Matrix::from_fn(n, 1, |_, _| 1.0);
        let mut nm = vec!["(Intercept)".to_string()];
        nm.extend(names.iter().cloned());
        (ones.hcat(x)?, nm)
    } else {
        (x.clone(), names.to_vec())
    };
    let p = xd.ncols();
    let params = p + o.absorbed;
    if n <= params {
        return Err(ModelError::NoResidualDf { n, params });
    }
    let qr = Qr::new(&xd).map_err(|e| match e {
        LinalgError::RankDeficient { column } => ModelError::RankDeficient {
            column: all_names[column].clone(),
        },
        other => other.into(),
    })?;
    let beta = qr.solve(y)?;
    let residuals = qr.residuals(y);
    let fitted: Vec<f64> = y.iter().zip(&residuals).map(|(a, b)| a - b).collect();
    let rss = dot(&residuals, &residuals);
    let df_resid = n - params;
    let sigma2 = rss / df_resid as f64;
    let bread = qr.unscaled_covariance();
    let covariance = match o.se {
        SeKind::Classical => {
            let mut c = bread;
            c.scale(sigma2);
            c
        }
        SeKind::ClusterRobust => {
            let cl = o.clusters.ok_or(ModelError::MissingClusters)?;
            cluster_robust(&xd, &residuals, cl, &bread, p)?
        }
    };
    let ref_df = match o.se {
        SeKind::Classical => df_resid as f64,
        SeKind::ClusterRobust => (n_groups(o.clusters.unwrap_or(&[])) as f64 - 1.0).max(1.0),
    };
    let terms = all_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = covariance[(j, j)].sqrt();
            let t = beta[j] / se;
            Term {
                name: name.clone(),
                estimate: beta[j],
                std_error: se,
                t_value: t,
                p_value: t_two_sided(t, ref_df),
            }
        })
        .collect();
    let r2 = if o.tss > 0.0 { 1.0 - rss / o.tss } else { 0.0 };
    let k = p - usize::from(o.intercept);
    let (adj, f, fp) = model_f(r2, n, k, df_resid, o.intercept || o.absorbed > 0);
    Ok(FitResult {
        terms,
        r_squared: r2,
        adj_r_squared: adj,
        f_stat: f,
        f_df: (k, df_resid),
        f_p_value: fp,
        residuals,
        fitted,
        rss,
        n,
        df_resid,
        sigma2,
        covariance,
        se_kind: o.se,
        absorbed_clusters: o.absorbed,
        dropped: Vec::new(),
        lsdv_r_squared: None,
        ref_df,
    })
}

// Adjusted R² and the overall F for `k` slopes.
fn model_f(r2: f64, n: usize, k: usize, df_resid: usize, centered: bool) -> (f64, f64, f64) {
    let dfr = df_resid as f64;
    let base = if centered { n as f64 - 1.0 } else { n as f64 };
    let adj = 1.0 - (1.0 - r2) * base / dfr;
    if k == 0 {
        return (adj, f64::NAN, f64::NAN);
    }
    let f = (r2 / k as f64) / ((1.0 - r2) / dfr);
    (adj, f, f_sf(f, k as f64, dfr))
}

fn n_groups(clusters: &[usize]) -> usize {
    clusters.iter().copied().max().map_or(0, |m| m + 1)
}

fn cluster_robust(
    x: &Matrix,
    resid: &[f64],
    clusters: &[usize],
    bread: &Matrix,
    p: usize,
) -> Result<Matrix, ModelError> {
    let n = x.nrows();
    if clusters.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: clusters.len(),
        }
        .into());
    }
    let mut scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(clusters[i]).or_insert_with(|| vec![0.0; p]);
        for (j, sj) in s.iter_mut().enumerate() {
            *sj += x[(i, j)] * resid[i];
        }
    }
    let g = scores.len() as f64;
    let mut meat = Matrix::zeros(p, p);
    for s in scores.values() {
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    let mut v = bread.matmul(&meat)?.matmul(bread)?;
    let c = g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - p as f64);
    v.scale(c);
    Ok(v)
}

/// Pooled OLS with intercept.
pub fn fit_ols(panel: &AnalysisPanel, spec: &RegressionSpec) -> Result<FitResult, ModelError> {
    if spec.fixed_effects {
        return fit_cluster_fe(panel, spec);
    }
    let d = build_design(panel, spec)?;
    fit_design(&d, spec.se)
}

pub fn fit_design(d: &Design, se: SeKind) -> Result<FitResult, ModelError> {
    let mean = d.y.iter().sum::<f64>() / d.y.len().max(1) as f64;
    let tss = d.y.iter().map(|v| (v - mean) * (v - mean)).sum();
    least_squares(
        &d.x,
        &d.y,
        &d.names,
        &LsOptions {
            intercept: true,
            se,
            clusters: Some(&d.clusters),
            absorbed: 0,
            tss,
        },
    )
}

/// Cluster fixed effects by within-cluster demeaning.
///
/// R² is the within R²; adjusted R² and the F test use n - G - p residual
/// degrees of freedom. The dummy-parameterization R² is in `lsdv_r_squared`.
pub fn fit_cluster_fe(panel: &AnalysisPanel, spec: &RegressionSpec) -> Result<FitResult, ModelError> {
    let d = build_design(panel, spec)?;
    fit_fe_design(&d, spec.se)
}

pub fn fit_fe_design(d: &Design, se: SeKind) -> Result<FitResult, ModelError> {
    let n = d.y.len();
    let (groups, g) = compact_groups(&d.clusters);
    if g < 2 {
        return Err(ModelError::TooFewClusters(g));
    }
    let y_w = demean(&d.y, &groups, g);
    let mut kept = Vec::new();
    let mut names = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..d.x.ncols() {
        let col = d.x.column(j);
        let w = demean(&col, &groups, g);
        if norm2(&w) <= RANK_TOL * norm2(&col).max(f64::MIN_POSITIVE) {
            dropped.push(d.names[j].clone());
        } else {
            kept.push(w);
            names.push(d.names[j].clone());
        }
    }
    if kept.is_empty() {
        return Err(ModelError::AllAbsorbed);
    }
    let xw = Matrix::from_columns(&kept)?;
    let tss_within = dot(&y_w, &y_w);
    let mut fit = least_squares(
        &xw,
        &y_w,
        &names,
        &LsOptions {
            intercept: false,
            se,
            clusters: Some(&groups),
            absorbed: g,
            tss: tss_within,
        },
    )?;
    // within fit has no intercept column but the absorbed effects act as one
    let k = names.len();
    let (adj, f, fp) = model_f(fit.r_squared, n, k, fit.df_resid, true);
    fit.adj_r_squared = adj;
    fit.f_stat = f;
    fit.f_df = (k, fit.df_resid);
    fit.f_p_value = fp;
    // fitted values on the original scale: y - e
    fit.fitted = d.y.iter().zip(&fit.residuals).map(|(a, b)| a - b).collect();
    let mean = d.y.iter().sum::<f64>() / n as f64;
    let tss_total: f64 = d.y.iter().map(|v| (v - mean) * (v - mean)).sum();
    fit.lsdv_r_squared = Some(1.0 - fit.rss / tss_total);
    fit.dropped = dropped;
    Ok(fit)
}

/// Cluster fixed effects with one explicit dummy per cluster and no
/// intercept. Slower than the within path; used to cross-check it.
pub fn fit_cluster_dummies(d: &Design) -> Result<FitResult, ModelError> {
    let n = d.y.len();
    let (groups, g) = compact_groups(&d.clusters);
    if g < 2 {
        return Err(ModelError::TooFewClusters(g));
    }
    let mut x = Matrix::zeros(n, g + d.x.ncols());
    for i in 0..n {
        x[(i, groups[i])] = 1.0;
        for j in 0..d.x.ncols() {
            x[(i, g + j)] = d.x[(i, j)];
        }
    }
    let mut names: Vec<String> = (0..g).map(|c| format!("cluster_{c}")).collect();
    names.extend(d.names.iter().cloned());
    let mean = d.y.iter().sum::<f64>() / n as f64;
    let tss = d.y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut fit = least_squares(
        &x,
        &d.y,
        &names,
        &LsOptions {
            intercept: false,
            se: SeKind::Classical,
            clusters: None,
            absorbed: 0,
            tss,
        },
    )?;
    let k = d.x.ncols();
    let (adj, f, fp) = model_f(fit.r_squared, n, g + k - 1, fit.df_resid, true);
    fit.adj_r_squared = adj;
    fit.f_stat = f;
    fit.f_df = (g + k - 1, fit.df_resid);
    fit.f_p_value = fp;
    fit.lsdv_r_squared = Some(fit.r_squared);
    Ok(fit)
}

// Relabels arbitrary cluster indices as 0..G in order of first appearance.
fn compact_groups(clusters: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = clusters
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn demean(v: &[f64], groups: &[usize], g: usize) -> Vec<f64> {
    let mut sum = vec![0.0; g];
    let mut cnt = vec![0usize; g];
    for (x, &k) in v.iter().zip(groups) {
        sum[k] += x;
        cnt[k] += 1;
    }
    v.iter()
        .zip(groups)
        .map(|(x, &k)| x - sum[k] / cnt[k] as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaRow {
    pub res_df: usize,
    pub rss: f64,
    /// `None` on the first row.
    pub df: Option<usize>,
    pub sum_sq: Option<f64>,
    /// `None` on the first row and where `df` is zero.
    pub f: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub labels: Vec<String>,
    pub rows: Vec<AnovaRow>,
}

/// Nested comparison from `(residual df, RSS)` pairs ordered from the
/// smallest model to the largest. Each F uses the largest model's mean
/// squared error as denominator.
pub fn anova_from_rss(models: &[(usize, f64)]) -> Result<AnovaTable, ModelError> {
    if models.len() < 2 {
        return Err(ModelError::TooFewModels);
    }
    for (k, w) in models.windows(2).enumerate() {
        if w[1].0 > w[0].0 || w[1].1 > w[0].1 {
            return Err(ModelError::NotNested { row: k + 1 });
        }
    }
    let (full_df, full_rss) = models[models.len() - 1];
    if full_df == 0 {
        return Err(ModelError::NoResidualDf {
            n: full_df,
            params: 0,
        });
    }
    let scale = full_rss / full_df as f64;
    let mut rows = vec![AnovaRow {
        res_df: models[0].0,
        rss: models[0].1,
        df: None,
        sum_sq: None,
        f: None,
        p_value: None,
    }];
    for w in models.windows(2) {
        let df = w[0].0 - w[1].0;
        let ss = w[0].1 - w[1].1;
        let (f, p) = if df == 0 {
            (None, None)
        } else {
            let f = (ss / df as f64) / scale;
            (Some(f), Some(f_sf(f, df as f64, full_df as f64)))
        };
        rows.push(AnovaRow {
            res_df: w[1].0,
            rss: w[1].1,
            df: Some(df),
            sum_sq: Some(ss),
            f,
            p_value: p,
        });
    }
    let labels = (1..=models.len()).map(|k| format!("model {k}")).collect();
    Ok(AnovaTable { labels, rows })
}

/// Nested comparison of fitted models on the same rows.
pub fn anova_nested(fits: &[FitResult]) -> Result<AnovaTable, ModelError> {
    if let Some(first) = fits.first() {
        if let Some(k) = fits.iter().position(|f| f.n != first.n) {
            return Err(ModelError::NotNested { row: k });
        }
    }
    let pairs: Vec<(usize, f64)> = fits.iter().map(|f| (f.df_resid, f.rss)).collect();
    anova_from_rss(&pairs)
}

/// Outcome change per one percent increase in light, for a coefficient on
/// log light.
pub fn semi_elasticity(beta: f64) -> f64 {
    beta / 100.0
}

/// Outcome change per one standard deviation increase of the regressor the
/// coefficient multiplies, on that regressor's own scale.
pub fn std_effect(beta: f64, sd_x: f64) -> Option<f64> {
    (sd_x > 0.0).then_some(beta * sd_x)
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::Zero;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rat(v: f64) -> BigRational {
        BigRational::from_float(v).unwrap()
    }

    // Gauss-Jordan on exact rationals.
    fn exact_normal_equations(x: &Matrix, y: &[f64]) -> Vec<f64> {
        let (n, p) = (x.nrows(), x.ncols());
        let mut a = vec![vec![BigRational::zero(); p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                let mut s = BigRational::zero();
                for r in 0..n {
                    s += rat(x[(r, i)]) * rat(x[(r, j)]);
                }
                a[i][j] = s;
            }
            let mut s = BigRational::zero();
            for r in 0..n {
                s += rat(x[(r, i)]) * rat(y[r]);
            }
            a[i][p] = s;
        }
        for c in 0..p {
            let piv = (c..p).find(|&r| !a[r][c].is_zero()).unwrap();
            a.swap(c, piv);
            let d = a[c][c].clone();
            for v in a[c].iter_mut() {
                *v = &*v / &d;
            }
            for r in 0..p {
                if r != c && !a[r][c].is_zero() {
                    let f = a[r][c].clone();
                    for k in 0..=p {
                        let t = &a[c][k] * &f;
                        a[r][k] -= t;
                    }
                }
            }
        }
        a.iter()
            .map(|row| {
                let v = &row[p];
                let (num, den) = (v.numer().clone(), v.denom().clone());
                // scale into f64 range without losing the exact ratio
                let shift = den.bits().saturating_sub(900) as usize;
                let num = num >> shift;
                let den: BigInt = den >> shift;
                to_f64(&num) / to_f64(&den)
            })
            .collect()
    }

    fn to_f64(v: &BigInt) -> f64 {
        use num_traits::ToPrimitive;
        v.to_f64().unwrap()
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn exact_line_has_unit_r2() {
        let x = Matrix::from_fn(6, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..6).map(|i| 2.0 * i as f64).collect();
        let fit = ols(&x, &y, &names(1), true).unwrap();
        assert!((fit.terms[1].estimate - 2.0).abs() < 1e-12);
        assert!(fit.terms[0].estimate.abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_problem_matches_rational_oracle() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [1.2, 1.9, 3.2, 3.8, 5.1, 5.8];
        let x = Matrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let oracle = exact_normal_equations(&x, &ys);
        let fit = ols(&Matrix::from_fn(6, 1, |i, _| xs[i]), &ys, &names(1), true).unwrap();
        for (a, b) in fit.coefficients().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Sxy = 16.6, Sxx = 17.5, both means 3.5
        assert!((oracle[1] - 166.0 / 175.0).abs() < 1e-14);
        assert!((oracle[0] - 0.18).abs() < 1e-14);
    }

    #[test]
    fn random_problems_match_rational_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(6..15);
            let p = rng.random_range(1..4);
            let x = Matrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut full = Matrix::from_fn(n, 1, |_, _| 1.0);
            full = full.hcat(&x).unwrap();
            let oracle = exact_normal_equations(&full, &y);
            let fit = ols(&x, &y, &names(p), true).unwrap();
            for (a, b) in fit.coefficients().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(40, 3, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let fit = ols(&x, &y, &names(3), true).unwrap();
        for j in 0..3 {
            assert!(dot(&x.column(j), &fit.residuals).abs() < 1e-8);
        }
        assert!(fit.residuals.iter().sum::<f64>().abs() < 1e-8);
        assert!(fit.adj_r_squared <= fit.r_squared);
        assert_eq!(fit.df_resid, 40 - 4);
    }

    #[test]
    fn orthogonal_column_leaves_others_unchanged() {
        // centered alternating column is orthogonal to 1 and to x below
        let xs = [1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 4.0, 4.0];
        let z = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let ys = [2.0, 4.5, 5.0, 7.0, 3.0, 2.5, 8.0, 9.0];
        let a = ols(&Matrix::from_fn(8, 1, |i, _| xs[i]), &ys, &names(1), true).unwrap();
        let b = ols(
            &Matrix::from_fn(8, 2, |i, j| if j == 0 { xs[i] } else { z[i] }),
            &ys,
            &names(2),
            true,
        )
        .unwrap();
        assert!((a.terms[0].estimate - b.terms[0].estimate).abs() < 1e-10);
        assert!((a.terms[1].estimate - b.terms[1].estimate).abs() < 1e-10);
    }

    #[test]
    fn collinear_column_is_named() {
        let x = Matrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 3.0 * i as f64 });
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = ols(&x, &y, &["a".into(), "b".into()], true).unwrap_err();
        assert_eq!(err, ModelError::RankDeficient { column: "b".into() });
    }

    #[test]
    fn degree_one_basis_is_centered_x() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let b = ortho_poly_basis(&x, 1).unwrap();
        let m = 3.5;
        let norm = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt();
        for i in 0..4 {
            assert!((b[(i, 0)] - (x[i] - m) / norm).abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_distinct_values() {
        assert_eq!(
            ortho_poly_basis(&[1.0, 1.0, 2.0, 2.0], 2).unwrap_err(),
            ModelError::InsufficientDistinct { needed: 3, found: 2 }
        );
    }

    #[test]
    fn ortho_and_raw_fits_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut raw = Matrix::from_fn(20, 1, |_, _| 1.0);
        raw = raw.hcat(&raw_poly_basis(&x, 3)).unwrap();
        let beta = exact_normal_equations(&raw, &y);
        let oracle = raw.matvec(&beta).unwrap();
        let fit = ols(&ortho_poly_basis(&x, 3).unwrap(), &y, &names(3), true).unwrap();
        for (a, b) in fit.fitted.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn eval_reproduces_training_basis() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let p = OrthoPoly::fit(&x, 4).unwrap();
        let a = p.eval(&x);
        let b = ortho_poly_basis(&x, 4).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn basis_gram_is_identity(xs in proptest::collection::vec(-9.0f64..4.0, 12..60)) {
            prop_assume!(count_distinct(&xs) >= 5);
            let b = ortho_poly_basis(&xs, 4).unwrap();
            let g = b.gram();
            for i in 0..4 {
                prop_assert!(b.column(i).iter().sum::<f64>().abs() < 1e-10);
                for j in 0..4 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((g[(i, j)] - want).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn basis_is_scale_invariant(
            xs in proptest::collection::vec(-9.0f64..4.0, 12..40),
            ys in proptest::collection::vec(-3.0f64..3.0, 40),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(count_distinct(&xs) >= 4);
            let y = &ys[..xs.len()];
            let scaled: Vec<f64> = xs.iter().map(|v| v * c).collect();
            let a = ols(&ortho_poly_basis(&xs, 3).unwrap(), y, &names(3), true).unwrap();
            let b = ols(&ortho_poly_basis(&scaled, 3).unwrap(), y, &names(3), true).unwrap();
            prop_assert!((a.r_squared - b.r_squared).abs() < 1e-8);
            for (u, v) in a.fitted.iter().zip(&b.fitted) {
                prop_assert!((u - v).abs() < 1e-8);
            }
        }

        #[test]
        fn nested_degrees_reduce_rss(
            xs in proptest::collection::vec(-9.0f64..4.0, 20..50),
            ys in proptest::collection::vec(-3.0f64..3.0, 50),
        ) {
            prop_assume!(count_distinct(&xs) >= 6);
            let y = &ys[..xs.len()];
            let fits: Vec<FitResult> = (1..=5)
                .map(|d| ols(&ortho_poly_basis(&xs, d).unwrap(), y, &names(d), true).unwrap())
                .collect();
            for w in fits.windows(2) {
                prop_assert!(w[1].rss <= w[0].rss + 1e-9);
                prop_assert!(w[1].r_squared >= w[0].r_squared - 1e-12);
            }
            prop_assert!(anova_nested(&fits).is_ok());
        }
    }

    fn panel_design(rng: &mut rand_chacha::ChaCha8Rng, g: usize, per: usize) -> Design {
        let n = g * per;
        let clusters: Vec<usize> = (0..n).map(|i| i / per).collect();
        let effect: Vec<f64> = (0..g).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Matrix::from_fn(n, 2, |i, _| rng.random_range(-1.0..1.0) + effect[clusters[i]]);
        let y: Vec<f64> = (0..n)
            .map(|i| 1.5 * x[(i, 0)] - 0.5 * x[(i, 1)] + effect[clusters[i]] + rng.random_range(-0.3..0.3))
            .collect();
        Design {
            x,
            names: names(2),
            y,
            clusters,
            n_clusters: g,
        }
    }

    #[test]
    fn within_and_dummy_paths_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let d = panel_design(&mut rng, 7, 6);
            let w = fit_fe_design(&d, SeKind::Classical).unwrap();
            let l = fit_cluster_dummies(&d).unwrap();
            for j in 0..2 {
                let a = &w.terms[j];
                let b = &l.terms[7 + j];
                assert!((a.estimate - b.estimate).abs() < 1e-8);
                assert!((a.std_error - b.std_error).abs() < 1e-8);
            }
            assert_eq!(w.df_resid, l.df_resid);
            assert!((w.rss - l.rss).abs() < 1e-8);
            assert!((w.lsdv_r_squared.unwrap() - l.r_squared).abs() < 1e-10);
        }
    }

    #[test]
    fn cluster_intercepts_are_absorbed() {
        let n = 12;
        let clusters: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let xs: Vec<f64> = (0..n).map(|i| (i * i % 7) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * xs[i] + [10.0, -4.0, 0.5][clusters[i]]).collect();
        let d = Design {
            x: Matrix::from_fn(n, 1, |i, _| xs[i]),
            names: names(1),
            y,
            clusters,
            n_clusters: 3,
        };
        let fit = fit_fe_design(&d, SeKind::Classical).unwrap();
        assert!((fit.terms[0].estimate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_clusters_absorb_everything() {
        let d = Design {
            x: Matrix::from_fn(5, 1, |i, _| i as f64),
            names: names(1),
            y: vec![1.0, 2.0, 0.0, 4.0, 3.0],
            clusters: (0..5).collect(),
            n_clusters: 5,
        };
        assert_eq!(fit_fe_design(&d, SeKind::Classical).unwrap_err(), ModelError::AllAbsorbed);
    }

    #[test]
    fn cluster_constant_covariate_is_dropped() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut d = panel_design(&mut rng, 5, 4);
        let extra: Vec<f64> = d.clusters.iter().map(|&c| c as f64 * 1.7).collect();
        let mut cols: Vec<Vec<f64>> = (0..2).map(|j| d.x.column(j)).collect();
        cols.push(extra);
        d.x = Matrix::from_columns(&cols).unwrap();
        d.names.push("region".into());
        let fit = fit_fe_design(&d, SeKind::Classical).unwrap();
        assert_eq!(fit.dropped, vec!["region".to_string()]);
        assert_eq!(fit.terms.len(), 2);
    }

    #[test]
    fn robust_errors_equal_classical_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let d = panel_design(&mut rng, 10, 5);
        let c = fit_design(&d, SeKind::Classical).unwrap();
        let r = fit_design(&d, SeKind::ClusterRobust).unwrap();
        assert_eq!(c.coefficients(), r.coefficients());
        assert!(r.terms.iter().all(|t| t.std_error.is_finite() && t.std_error > 0.0));
    }

    #[test]
    fn robust_intervals_use_cluster_df() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d = panel_design(&mut rng, 10, 5);
        let r = fit_design(&d, SeKind::ClusterRobust).unwrap();
        assert_eq!(r.ref_df, 9.0);
        let t = &r.terms[1];
        let (lo, hi) = r.conf_int(&t.name, 0.95).unwrap();
        let q = crate::special::t_quantile(0.975, 9.0);
        assert!(((hi - lo) / 2.0 - q * t.std_error).abs() < 1e-12);
        let c = fit_design(&d, SeKind::Classical).unwrap();
        assert_eq!(c.ref_df, c.df_resid as f64);
    }

    #[test]
    fn table_rss_reproduces_f_column() {
        // full-precision RSS: printed RSS minus the running Sum of Sq column
        let t = anova_from_rss(&[
            (8732, 15346.1918),
            (8731, 15336.0109),
            (8730, 15329.74),
            (8729, 15318.4405),
            (8728, 15315.0),
        ])
        .unwrap();
        let want = [5.8021, 3.5738, 6.4396, 1.9608];
        let stars = ["**", "*", "**", ""];
        for (k, row) in t.rows.iter().skip(1).enumerate() {
            assert!((row.f.unwrap() - want[k]).abs() < 1e-3, "{:?}", row);
            assert_eq!(significance_stars(row.p_value.unwrap()), stars[k]);
        }
    }

    #[test]
    fn identical_rss_gives_zero_f() {
        let t = anova_from_rss(&[(10, 5.0), (9, 5.0), (8, 4.0)]).unwrap();
        assert_eq!(t.rows[1].f, Some(0.0));
        assert!((t.rows[1].p_value.unwrap() - 1.0).abs() < 1e-12);
        let dup = anova_from_rss(&[(10, 5.0), (8, 4.0), (8, 4.0)]).unwrap();
        assert_eq!(dup.rows[2].sum_sq, Some(0.0));
        assert_eq!(dup.rows[2].f, None);
    }

    #[test]
    fn increasing_rss_is_not_nested() {
        assert_eq!(
            anova_from_rss(&[(10, 5.0), (9, 6.0)]).unwrap_err(),
            ModelError::NotNested { row: 1 }
        );
    }

    #[test]
    fn elasticity_and_std_effect() {
        assert!((semi_elasticity(8.242) - 0.08242).abs() < 1e-15);
        assert_eq!(semi_elasticity(0.0), 0.0);
        assert_eq!(semi_elasticity(-1.0), -0.01);
        assert_eq!(std_effect(1.0, 2.0), Some(2.0));
        assert_eq!(std_effect(0.0, 2.0), Some(0.0));
        assert_eq!(std_effect(1.0, 0.0), None);
    }

    #[test]
    fn std_effect_matches_standardized_refit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-1.0..1.0)).collect();
        let m = x.iter().sum::<f64>() / 50.0;
        let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 49.0).sqrt();
        let z: Vec<f64> = x.iter().map(|v| (v - m) / sd).collect();
        let a = ols(&Matrix::from_fn(50, 1, |i, _| x[i]), &y, &names(1), true).unwrap();
        let b = ols(&Matrix::from_fn(50, 1, |i, _| z[i]), &y, &names(1), true).unwrap();
        assert!((std_effect(a.terms[1].estimate, sd).unwrap() - b.terms[1].estimate).abs() < 1e-10);
    }
}
