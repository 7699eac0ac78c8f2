//! Residual diagnostics: spatial weights, the LM test for a spatial lag,
//! Moran's I and the first-difference serial correlation test.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

use crate::data::{GeoCluster, LatLon};
use crate::geo::haversine;
use crate::linalg::{dot, LinalgError, Matrix, Qr};
use crate::linear_models::FitResult;
use crate::special::{chi2_sf, f_sf, normal_sf};

pub const DEFAULT_NEIGHBOURS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("spatial weights need at least two locations, got {0}")]
    TooFewLocations(usize),
    #[error("locations {0} and {1} coincide; inverse distance is undefined")]
    CoincidentLocations(usize, usize),
    #[error("weights are {w}x{w} but the data have {n} rows")]
    NotConformable { w: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("serial-correlation test needs at least three periods in some unit")]
    NotComputable,
    #[error("need at least two units with lagged differences, got {0}")]
    TooFewUnits(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Knn(usize),
    InverseDistance { cutoff_km: f64 },
    /// Observation-level expansion of a cluster-level matrix.
    Expanded,
}

/// Sparse spatial weights, stored row-wise with column indices ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    rows: Vec<Vec<(usize, f64)>>,
    pub scheme: WeightScheme,
    pub row_standardized: bool,
}

impl SpatialWeights {
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>, scheme: WeightScheme) -> Self {
        for r in rows.iter_mut() {
            r.sort_by_key(|e| e.0);
        }
        Self {
            rows,
            scheme,
            row_standardized: false,
        }
    }

    /// Binary k-nearest-neighbour weights by great-circle distance; ties go
    /// to the lower index.
    pub fn knn(points: &[LatLon], k: usize) -> Result<Self, DiagError> {
        let n = points.len();
        if n < 2 {
            return Err(DiagError::TooFewLocations(n));
        }
        if k == 0 {
            return Err(DiagError::InvalidParameter("k must be positive"));
        }
        let k = k.min(n - 1);
        let rows = (0..n)
            .map(|i| {
                let mut d: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (haversine(points[i], points[j]), j))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d[..k].iter().map(|&(_, j)| (j, 1.0)).collect()
            })
            .collect();
        Ok(Self::from_rows(rows, WeightScheme::Knn(k)))
    }

    /// `1/d` for pairs within `cutoff_km`; rows with no neighbour stay zero.
    pub fn inverse_distance(points: &[LatLon], cutoff_km: f64) -> Result<Self, DiagError> {
        let n = points.len();
        if n < 2 {
            return Err(DiagError::TooFewLocations(n));
        }
        if !(cutoff_km > 0.0) {
            return Err(DiagError::InvalidParameter("cutoff must be positive"));
        }
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = haversine(points[i], points[j]);
                if d == 0.0 {
                    return Err(DiagError::CoincidentLocations(i, j));
                }
                if d <= cutoff_km {
                    rows[i].push((j, 1.0 / d));
                    rows[j].push((i, 1.0 / d));
                }
            }
        }
        Ok(Self::from_rows(rows, WeightScheme::InverseDistance { cutoff_km }))
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.rows[i];
        r.binary_search_by_key(&j, |e| e.0).map_or(0.0, |k| r[k].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Rows without any neighbour.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.rows[i].is_empty()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.nnz() == 0
    }

    pub fn row_standardize(mut self) -> Self {
        for r in self.rows.iter_mut() {
            let s: f64 = r.iter().map(|e| e.1).sum();
            if s > 0.0 {
                r.iter_mut().for_each(|e| e.1 /= s);
            }
        }
        self.row_standardized = true;
        self
    }

    /// `W v`.
    pub fn lag(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| w * v[j]).sum())
            .collect()
    }

    /// `tr(WᵀW + WW)`.
    pub fn trace_term(&self) -> f64 {
        let mut t = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                t += w * w + w * self.get(j, i);
            }
        }
        t
    }

    /// Spreads cluster-level weights over observations: an observation in
    /// cluster c gives each member of neighbour cluster c' the weight
    /// `W[c][c'] / |c'|`, so row sums carry over unchanged.
    pub fn expand_to_observations(&self, obs_cluster: &[usize]) -> Result<Self, DiagError> {
        let g = self.n();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); g];
        for (i, &c) in obs_cluster.iter().enumerate() {
            if c >= g {
                return Err(DiagError::NotConformable { w: g, n: c + 1 });
            }
            members[c].push(i);
        }
        let cluster_rows: Vec<Vec<(usize, f64)>> = (0..g)
            .map(|c| {
                let mut out = Vec::new();
                for &(c2, w) in &self.rows[c] {
                    let m = members[c2].len();
                    if m > 0 {
                        out.extend(members[c2].iter().map(|&j| (j, w / m as f64)));
                    }
                }
                out.sort_by_key(|e| e.0);
                out
            })
            .collect();
        let rows = obs_cluster.iter().map(|&c| cluster_rows[c].clone()).collect();
        Ok(Self {
            rows,
            scheme: WeightScheme::Expanded,
            row_standardized: self.row_standardized,
        })
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// One-line description for report headers.
    pub fn describe(&self) -> String {
        let base = match self.scheme {
            WeightScheme::Knn(k) => alloc::format!("{k}-nearest-neighbour contiguity"),
            WeightScheme::InverseDistance { cutoff_km } => alloc::format!("inverse distance within {cutoff_km} km"),
            WeightScheme::Expanded => "cluster weights expanded to observations".into(),
        };
        if self.row_standardized {
            alloc::format!("{base}, row-standardized")
        } else {
            base
        }
    }
}

/// Default cluster weights: 5 nearest neighbours, row-standardized.
pub fn build_weights(clusters: &[GeoCluster], scheme: WeightScheme) -> Result<SpatialWeights, DiagError> {
    let pts: Vec<LatLon> = clusters.iter().map(|c| c.location).collect();
    let w = match scheme {
        WeightScheme::Knn(k) => SpatialWeights::knn(&pts, k)?,
        WeightScheme::InverseDistance { cutoff_km } => SpatialWeights::inverse_distance(&pts, cutoff_km)?,
        WeightScheme::Expanded => return Err(DiagError::InvalidParameter("expanded weights need a base matrix")),
    };
    Ok(w.row_standardize())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df1: f64,
    /// Denominator df for F tests.
    pub df2: Option<f64>,
    pub p_value: f64,
}

/// Anselin's LM test for an omitted spatial lag of the outcome, referred to
/// χ²(1). `x` is the full design of `fit`, intercept column included.
pub fn lm_spatial_lag(fit: &FitResult, x: &Matrix, w: &SpatialWeights) -> Result<TestResult, DiagError> {
    let n = fit.residuals.len();
    if w.n() != n || x.nrows() != n {
        return Err(DiagError::NotConformable { w: w.n(), n });
    }
    let e = &fit.residuals;
    let y: Vec<f64> = fit.fitted.iter().zip(e).map(|(a, b)| a + b).collect();
    let sigma2 = dot(e, e) / n as f64;
    let num = dot(e, &w.lag(&y)) / sigma2;
    if num == 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            df1: 1.0,
            df2: None,
            p_value: 1.0,
        });
    }
    let wxb = w.lag(&fit.fitted);
    let m_wxb = Qr::new(x)?.residuals(&wxb);
    let d = dot(&m_wxb, &m_wxb) / sigma2 + w.trace_term();
    let stat = num * num / d;
    Ok(TestResult {
        statistic: stat,
        df1: 1.0,
        df2: None,
        p_value: chi2_sf(stat, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoranResult {
    pub i: f64,
    pub expected: f64,
    pub variance: f64,
    pub z: f64,
    /// Two-sided normal p-value.
    pub p_value: f64,
}

/// Moran's I of `v` with its normal-approximation moments.
pub fn morans_i(v: &[f64], w: &SpatialWeights) -> Result<MoranResult, DiagError> {
    let n = v.len();
    if w.n() != n {
        return Err(DiagError::NotConformable { w: w.n(), n });
    }
    let m = v.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = v.iter().map(|a| a - m).collect();
    let s0: f64 = (0..n).map(|i| w.row(i).iter().map(|e| e.1).sum::<f64>()).sum();
    let i_stat = n as f64 / s0 * dot(&z, &w.lag(&z)) / dot(&z, &z);
    // S1 = ½ Σ (w_ij + w_ji)²; an entry whose transpose is zero stands for
    // both ordered pairs
    let mut s1 = 0.0;
    for i in 0..n {
        for &(j, wij) in w.row(i) {
            let wji = w.get(j, i);
            s1 += if wji == 0.0 { wij * wij } else { 0.5 * (wij + wji).powi(2) };
        }
    }
    let mut row_sum = vec![0.0; n];
    let mut col_sum = vec![0.0; n];
    for i in 0..n {
        for &(j, wij) in w.row(i) {
            row_sum[i] += wij;
            col_sum[j] += wij;
        }
    }
    let s2: f64 = (0..n).map(|i| (row_sum[i] + col_sum[i]).powi(2)).sum();
    let nf = n as f64;
    let expected = -1.0 / (nf - 1.0);
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - expected * expected;
    let zs = (i_stat - expected) / variance.sqrt();
    Ok(MoranResult {
        i: i_stat,
        expected,
        variance,
        z: zs,
        p_value: 2.0 * normal_sf(zs.abs()),
    })
}

/// Wooldridge's test for AR(1) errors in a fixed-effects panel.
///
/// Rows are grouped by `unit` and ordered by `time`. The first-differenced
/// regression of `y` on `x` (no constant) gives residuals ê; ê_t is then
/// regressed on ê_{t-1} and the slope tested against -0.5 with errors
/// clustered by unit, giving F(1, G - 1).
pub fn wooldridge_ar1(y: &[f64], x: &Matrix, unit: &[usize], time: &[i32]) -> Result<TestResult, DiagError> {
    let n = y.len();
    if x.nrows() != n || unit.len() != n || time.len() != n {
        return Err(DiagError::NotConformable { w: x.nrows(), n });
    }
    let mut groups: BTreeMap<usize, Vec<(i32, usize)>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(unit[i]).or_default().push((time[i], i));
    }
    let mut dy = Vec::new();
    let mut dx: Vec<Vec<f64>> = Vec::new();
    let mut owner = Vec::new();
    for (u, obs) in groups.iter_mut() {
        obs.sort_unstable();
        for w in obs.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            dy.push(y[b] - y[a]);
            dx.push((0..x.ncols()).map(|j| x[(b, j)] - x[(a, j)]).collect());
            owner.push(*u);
        }
    }
    if dy.is_empty() {
        return Err(DiagError::NotComputable);
    }
    let dxm = Matrix::from_fn(dy.len(), x.ncols(), |i, j| dx[i][j]);
    let e = Qr::new(&dxm)?.residuals(&dy);
    let mut series: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (k, u) in owner.iter().enumerate() {
        series.entry(*u).or_default().push(e[k]);
    }
    let s: Vec<Vec<f64>> = series.into_values().collect();
    wooldridge_from_differenced(&s)
}

/// The second stage of [`wooldridge_ar1`] on per-unit series of
/// first-differenced residuals, each in time order.
pub fn wooldridge_from_differenced(series: &[Vec<f64>]) -> Result<TestResult, DiagError> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut pairs = 0usize;
    for s in series {
        for w in s.windows(2) {
            sxx += w[0] * w[0];
            sxy += w[0] * w[1];
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(DiagError::NotComputable);
    }
    let g = series.iter().filter(|s| s.len() >= 2).count();
    if g < 2 {
        return Err(DiagError::TooFewUnits(g));
    }
    let b = sxy / sxx;
    let mut meat = 0.0;
    for s in series {
        let sc: f64 = s.windows(2).map(|w| w[0] * (w[1] - b * w[0])).sum();
        meat += sc * sc;
    }
    let gf = g as f64;
    let var = gf / (gf - 1.0) * meat / (sxx * sxx);
    let f = (b + 0.5) * (b + 0.5) / var;
    let df2 = gf - 1.0;
    Ok(TestResult {
        statistic: f,
        df1: 1.0,
        df2: Some(df2),
        p_value: f_sf(f, 1.0, df2),
    })
}
