//! Covariate ranking with regression-tree ensembles and nearest neighbours.
//!
//! Trees use exact greedy variance-reduction splits over presorted feature
//! columns. Every random choice comes from [`crate::rng::stream`] keyed by
//! the caller's seed and a task index.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("need at least two observations, got {0}")]
    TooFewRows(usize),
    #[error("feature matrix has {x} rows but y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("k = {k} exceeds the {n} available rows")]
    KTooLarge { k: usize, n: usize },
    #[error("need at least two folds and no more folds than rows")]
    BadFolds,
    #[error(transparent)]
    Panel(#[from] crate::panel::PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves hit `min_leaf` or are pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    /// SSE reduction credited to each feature by this tree's splits.
    gains: Vec<f64>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// `(feature, threshold)` of every split, in depth-first order.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, threshold, .. } => Some((feature, threshold)),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

/// Column-major copy of a feature matrix, with each column's row order
/// sorted once up front.
#[derive(Debug, Clone)]
pub struct Features {
    cols: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    n: usize,
}

impl Features {
    pub fn new(x: &Matrix) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.column(j)).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..c.len() as u32).collect();
                o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        Self {
            cols,
            order,
            n: x.nrows(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }
}

struct Grower<'a> {
    f: &'a Features,
    // sample position -> data row, and the target at each position
    rows: &'a [usize],
    target: &'a [f64],
    params: TreeParams,
    nodes: Vec<Node>,
    gains: Vec<f64>,
    go_left: Vec<bool>,
}

impl Grower<'_> {
    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let m = sorted[0].len();
        let (mut s, mut s2) = (0.0, 0.0);
        for &p in &sorted[0] {
            let t = self.target[p as usize];
            s += t;
            s2 += t * t;
        }
        let value = s / m as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(value));
        let sse = s2 - s * s / m as f64;
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || m < 2 * self.params.min_leaf || sse <= 1e-12 * s2.max(f64::MIN_POSITIVE) {
            return id;
        }
        let min_leaf = self.params.min_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        for (feat, list) in sorted.iter().enumerate() {
            let col = &self.f.cols[feat];
            let mut sl = 0.0;
            for k in 0..m - 1 {
                let pos = list[k] as usize;
                sl += self.target[pos];
                let nl = k + 1;
                if nl < min_leaf {
                    continue;
                }
                if m - nl < min_leaf {
                    break;
                }
                let xv = col[self.rows[pos]];
                let xn = col[self.rows[list[k + 1] as usize]];
                if xv == xn {
                    continue;
                }
                let sr = s - sl;
                let gain = sl * sl / nl as f64 + sr * sr / (m - nl) as f64 - s * s / m as f64;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    let mut thr = xv + (xn - xv) / 2.0;
                    if thr >= xn {
                        thr = xv;
                    }
                    best = Some((gain, feat, thr));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if gain <= 1e-12 * sse {
            return id;
        }
        self.gains[feature] += gain;
        let col = &self.f.cols[feature];
        for &p in &sorted[0] {
            self.go_left[p as usize] = col[self.rows[p as usize]] <= threshold;
        }
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&p| self.go_left[p as usize]);
            left.push(l);
            right.push(r);
        }
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

/// Fits one tree to `target[k]` observed at data row `rows[k]`.
fn fit_tree_on(f: &Features, rows: &[usize], target: &[f64], params: TreeParams, identity: bool) -> RegressionTree {
    let sorted: Vec<Vec<u32>> = if identity {
        f.order.clone()
    } else {
        (0..f.n_features())
            .map(|j| {
                let col = &f.cols[j];
                let mut o: Vec<u32> = (0..rows.len() as u32).collect();
                o.sort_by(|&a, &b| {
                    col[rows[a as usize]]
                        .total_cmp(&col[rows[b as usize]])
                        .then(a.cmp(&b))
                });
                o
            })
            .collect()
    };
    let mut g = Grower {
        f,
        rows,
        target,
        params,
        nodes: Vec::new(),
        gains: vec![0.0; f.n_features()],
        go_left: vec![false; rows.len()],
    };
    if rows.is_empty() {
        return RegressionTree {
            nodes: vec![Node::Leaf(0.0)],
            gains: g.gains,
        };
    }
    g.grow(sorted, 0);
    RegressionTree {
        nodes: g.nodes,
        gains: g.gains,
    }
}

pub fn fit_tree(x: &Matrix, y: &[f64], params: TreeParams) -> Result<RegressionTree, SelectError> {
    check_xy(x, y)?;
    let f = Features::new(x);
    let rows: Vec<usize> = (0..y.len()).collect();
    Ok(fit_tree_on(&f, &rows, y, params, true))
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<(), SelectError> {
    if x.nrows() != y.len() {
        return Err(SelectError::LengthMismatch { x: x.nrows(), y: y.len() });
    }
    if y.len() < 2 {
        return Err(SelectError::TooFewRows(y.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    Gbm,
    Bagging,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub kind: EnsembleKind,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub init: f64,
    pub n_features: usize,
    /// Training MSE after 0, 1, …, n_trees boosting stages (GBM only).
    pub staged_mse: Vec<f64>,
    /// Out-of-bag MSE over rows left out of at least one bootstrap sample.
    pub oob_mse: Option<f64>,
}

impl TreeEnsemble {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::Gbm => {
                self.init
                    + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
            }
            EnsembleKind::Bagging => {
                if self.trees.is_empty() {
                    return self.init;
                }
                self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

/// Gradient boosting with squared loss, starting from the mean of `y`.
///
/// Deterministic: every stage fits the full residual vector. A constant `y`
/// yields an ensemble with no trees.
pub fn fit_gbm(x: &Matrix, y: &[f64], params: &GbmParams) -> Result<TreeEnsemble, SelectError> {
    check_xy(x, y)?;
    if params.n_trees == 0 || params.max_depth == 0 || params.min_leaf == 0 {
        return Err(SelectError::InvalidParameter("trees, depth and leaf size must be positive"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(SelectError::InvalidParameter("learning rate must be in (0, 1]"));
    }
    let f = Features::new(x);
    fit_gbm_features(&f, y, params)
}

pub fn fit_gbm_features(f: &Features, y: &[f64], params: &GbmParams) -> Result<TreeEnsemble, SelectError> {
    let n = y.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![init; n];
    let mse = |p: &[f64]| y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    let mut staged = vec![mse(&pred)];
    let mut trees = Vec::new();
    let rows: Vec<usize> = (0..n).collect();
    let tp = TreeParams {
        max_depth: Some(params.max_depth),
        min_leaf: params.min_leaf,
    };
    let constant = y.iter().all(|v| *v == y[0]);
    if !constant {
        for _ in 0..params.n_trees {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let tree = fit_tree_on(f, &rows, &resid, tp, true);
            if tree.nodes.len() == 1 {
                // no split improves the residuals; later stages would repeat this
                break;
            }
            for (i, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.predict_row(&f.row(i));
            }
            staged.push(mse(&pred));
            trees.push(tree);
        }
    }
    Ok(TreeEnsemble {
        kind: EnsembleKind::Gbm,
        trees,
        learning_rate: params.learning_rate,
        max_depth: Some(params.max_depth),
        init,
        n_features: f.n_features(),
        staged_mse: staged,
        oob_mse: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaggingParams {
    pub n_trees: usize,
    pub tree: TreeParams,
}

impl Default for BaggingParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            tree: TreeParams::default(),
        }
    }
}

/// Bootstrap resample of `0..n` for tree `index`.
pub fn bootstrap_sample(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = stream(derive_seed(seed, "bagging"), index);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn fit_bagging(x: &Matrix, y: &[f64], params: &BaggingParams, seed: u64) -> Result<TreeEnsemble, SelectError> {
    check_xy(x, y)?;
    if params.n_trees == 0 || params.tree.min_leaf == 0 {
        return Err(SelectError::InvalidParameter("trees and leaf size must be positive"));
    }
    let samples: Vec<Vec<usize>> = (0..params.n_trees)
        .map(|b| bootstrap_sample(y.len(), seed, b as u64))
        .collect();
    fit_bagging_with_samples(x, y, &samples, params.tree)
}

/// Bagging over caller-supplied resamples (row indices, repeats allowed).
pub fn fit_bagging_with_samples(
    x: &Matrix,
    y: &[f64],
    samples: &[Vec<usize>],
    tree: TreeParams,
) -> Result<TreeEnsemble, SelectError> {
    check_xy(x, y)?;
    let n = y.len();
    let f = Features::new(x);
    let mut oob_sum = vec![0.0; n];
    let mut oob_cnt = vec![0usize; n];
    let mut trees = Vec::with_capacity(samples.len());
    for rows in samples {
        if rows.iter().any(|&r| r >= n) {
            return Err(SelectError::InvalidParameter("resample index out of range"));
        }
        let target: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        let t = fit_tree_on(&f, rows, &target, tree, false);
        let mut inbag = vec![false; n];
        for &r in rows {
            inbag[r] = true;
        }
        for i in (0..n).filter(|&i| !inbag[i]) {
            oob_sum[i] += t.predict_row(&f.row(i));
            oob_cnt[i] += 1;
        }
        trees.push(t);
    }
    let (mut se, mut cnt) = (0.0, 0usize);
    for i in 0..n {
        if oob_cnt[i] > 0 {
            let e = y[i] - oob_sum[i] / oob_cnt[i] as f64;
            se += e * e;
            cnt += 1;
        }
    }
    Ok(TreeEnsemble {
        kind: EnsembleKind::Bagging,
        trees,
        learning_rate: 1.0,
        max_depth: tree.max_depth,
        init: y.iter().sum::<f64>() / n as f64,
        n_features: f.n_features(),
        staged_mse: Vec::new(),
        oob_mse: (cnt > 0).then(|| se / cnt as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceMethod {
    Gbm,
    Bagging,
    KnnPermutation,
}

impl ImportanceMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gbm => "gbm",
            Self::Bagging => "bagging",
            Self::KnnPermutation => "knn_permutation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    pub features: Vec<String>,
    /// Non-negative, summing to 100 unless every raw score is zero.
    pub scores: Vec<f64>,
    pub cv_error: Option<f64>,
}

impl ImportanceReport {
    /// Feature indices from most to least important; ties keep column order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    pub fn score(&self, feature: &str) -> Option<f64> {
        self.features.iter().position(|f| f == feature).map(|i| self.scores[i])
    }
}

pub fn normalize_to_100(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.iter().map(|v| 100.0 * v / total).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// Split-gain importance: each feature's total SSE reduction, weighted by
/// the learning rate for boosting and averaged over trees for bagging.
pub fn ensemble_importance(ens: &TreeEnsemble, features: &[String]) -> ImportanceReport {
    let mut raw = vec![0.0; ens.n_features];
    let w = match ens.kind {
        EnsembleKind::Gbm => ens.learning_rate,
        EnsembleKind::Bagging => 1.0 / ens.trees.len().max(1) as f64,
    };
    for t in &ens.trees {
        for (r, g) in raw.iter_mut().zip(&t.gains) {
            *r += w * g;
        }
    }
    ImportanceReport {
        method: match ens.kind {
            EnsembleKind::Gbm => ImportanceMethod::Gbm,
            EnsembleKind::Bagging => ImportanceMethod::Bagging,
        },
        features: features.to_vec(),
        scores: normalize_to_100(&raw),
        cv_error: None,
    }
}

pub fn gbm_importance(ens: &TreeEnsemble, features: &[String]) -> ImportanceReport {
    ensemble_importance(ens, features)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    /// Rows scored per permutation; larger samples are subsampled.
    pub max_eval: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 10, max_eval: 1000 }
    }
}

/// K-nearest-neighbour regressor on z-scored features (Euclidean metric).
/// Zero-variance columns are zeroed so they never affect distances.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    k: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    ref_rows: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl KnnRegressor {
    pub fn fit(x: &Matrix, y: &[f64], k: usize) -> Result<Self, SelectError> {
        check_xy(x, y)?;
        if k == 0 {
            return Err(SelectError::InvalidParameter("k must be positive"));
        }
        if k > y.len() {
            return Err(SelectError::KTooLarge { k, n: y.len() });
        }
        let n = x.nrows() as f64;
        let p = x.ncols();
        let mut center = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for j in 0..p {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n;
            let v = c.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
            center[j] = m;
            scale[j] = if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 };
        }
        let mut me = Self {
            k,
            center,
            scale,
            ref_rows: Vec::new(),
            y: y.to_vec(),
        };
        me.ref_rows = (0..x.nrows()).map(|i| me.standardize(x.row(i))).collect();
        Ok(me)
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (v - self.center[j]) * self.scale[j])
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let q = self.standardize(row);
        let mut d: Vec<(f64, usize)> = self
            .ref_rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let k = self.k;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        d[..k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Permutation importance of a KNN regressor scored on (a subsample of) the
/// training rows: the MSE increase when one feature is shuffled.
pub fn knn_importance(
    x: &Matrix,
    y: &[f64],
    features: &[String],
    params: &KnnParams,
    seed: u64,
) -> Result<ImportanceReport, SelectError> {
    let model = KnnRegressor::fit(x, y, params.k)?;
    let n = y.len();
    let mut eval: Vec<usize> = (0..n).collect();
    if n > params.max_eval {
        let mut rng = stream(derive_seed(seed, "knn-eval"), 0);
        eval.shuffle(&mut rng);
        eval.truncate(params.max_eval);
        eval.sort_unstable();
    }
    let rows: Vec<Vec<f64>> = eval.iter().map(|&i| x.row(i).to_vec()).collect();
    let mse = |rows: &[Vec<f64>]| {
        rows.iter()
            .zip(&eval)
            .map(|(r, &i)| {
                let e = y[i] - model.predict_row(r);
                e * e
            })
            .sum::<f64>()
            / rows.len() as f64
    };
    let base = mse(&rows);
    let raw: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let mut perm: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let mut rng = stream(derive_seed(seed, "knn-permute"), j as u64);
            perm.shuffle(&mut rng);
            let shuffled: Vec<Vec<f64>> = rows
                .iter()
                .zip(&perm)
                .map(|(r, &v)| {
                    let mut r = r.clone();
                    r[j] = v;
                    r
                })
                .collect();
            (mse(&shuffled) - base).max(0.0)
        })
        .collect();
    Ok(ImportanceReport {
        method: ImportanceMethod::KnnPermutation,
        features: features.to_vec(),
        scores: normalize_to_100(&raw),
        cv_error: None,
    })
}

/// Ranking design from a merged panel: the fourteen attributes followed by
/// raw powers of log light, `light`, `light^2`, ...
pub fn panel_features(
    panel: &crate::panel::AnalysisPanel,
    light_powers: usize,
) -> Result<(Matrix, Vec<String>), SelectError> {
    let mut cols = Vec::with_capacity(14 + light_powers);
    let mut names = Vec::with_capacity(14 + light_powers);
    for c in crate::data::Covariate::ALL {
        cols.push(panel.covariate(c)?);
        names.push(String::from(c.name()));
    }
    let ll = panel.log_light();
    for k in 1..=light_powers {
        cols.push(ll.iter().map(|v| v.powi(k as i32)).collect());
        names.push(if k == 1 { String::from("light") } else { alloc::format!("light^{k}") });
    }
    let x = Matrix::from_columns(&cols).expect("columns share the panel length");
    Ok((x, names))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    /// Predicts the training-fold mean.
    Mean,
    Gbm(GbmParams),
    Bagging(BaggingParams),
    Knn { k: usize },
}

/// Seeded partition of `0..n` into `folds` groups of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream(derive_seed(seed, "cv-folds"), 0);
    idx.shuffle(&mut rng);
    let mut out = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

/// Mean squared test error over a seeded k-fold split.
pub fn cv_error(model: &ModelSpec, x: &Matrix, y: &[f64], folds: usize, seed: u64) -> Result<f64, SelectError> {
    check_xy(x, y)?;
    let n = y.len();
    if folds < 2 || folds > n {
        return Err(SelectError::BadFolds);
    }
    let assign = fold_assignment(n, folds, seed);
    let mut se = 0.0;
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assign[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let preds: Vec<f64> = match *model {
            ModelSpec::Mean => {
                let m = yt.iter().sum::<f64>() / yt.len() as f64;
                vec![m; test.len()]
            }
            ModelSpec::Gbm(p) => {
                let ens = fit_gbm(&xt, &yt, &p)?;
                test.iter().map(|&i| ens.predict_row(x.row(i))).collect()
            }
            ModelSpec::Bagging(p) => {
                let ens = fit_bagging(&xt, &yt, &p, derive_seed(seed, "cv-bagging") ^ k as u64)?;
                test.iter().map(|&i| ens.predict_row(x.row(i))).collect()
            }
            ModelSpec::Knn { k: kk } => {
                let m = KnnRegressor::fit(&xt, &yt, kk)?;
                test.iter().map(|&i| m.predict_row(x.row(i))).collect()
            }
        };
        for (&i, p) in test.iter().zip(preds) {
            se += (y[i] - p) * (y[i] - p);
        }
    }
    Ok(se / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn z(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    fn normal_matrix(rng: &mut rand_chacha::ChaCha8Rng, n: usize, p: usize) -> Matrix {
        Matrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn single_deep_tree_memorizes() {
        let x = Matrix::from_fn(12, 1, |i, _| (i * 7 % 12) as f64);
        let y: Vec<f64> = (0..12).map(|i| ((i * 5) % 9) as f64 - 3.0).collect();
        let p = GbmParams {
            n_trees: 1,
            max_depth: 64,
            learning_rate: 1.0,
            min_leaf: 1,
        };
        let ens = fit_gbm(&x, &y, &p).unwrap();
        for (a, b) in ens.predict(&x).iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_stage_stump_trace() {
        // y = 1{x > 0}; 3 of 8 rows positive
        let xs = [-3.0, -2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 2.0];
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let x = Matrix::from_fn(8, 1, |i, _| xs[i]);
        let p = GbmParams {
            n_trees: 2,
            max_depth: 1,
            learning_rate: 0.5,
            min_leaf: 1,
        };
        let ens = fit_gbm(&x, &y, &p).unwrap();
        // F0 = 3/8; each stump splits at 0 with leaf values equal to the
        // residuals, so F2 = F0 + (1 - (1 - 0.5)^2)(y - F0)
        let f0 = 0.375;
        for (a, &b) in ens.predict(&x).iter().zip(&y) {
            let want = f0 + 0.75 * (b - f0);
            assert!((a - want).abs() < 1e-12);
        }
        assert_eq!(ens.trees[0].splits(), vec![(0, 0.0)]);
        // 0.84375 and 0.40625 for positive and negative rows
        assert!((ens.predict_row(&[1.0]) - 0.84375).abs() < 1e-12);
        assert!((ens.predict_row(&[-1.0]) - 0.09375).abs() < 1e-12);
    }

    #[test]
    fn importance_hand_tally() {
        let xs = [-3.0, -2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 2.0];
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        // second column never helps: constant
        let x = Matrix::from_fn(8, 2, |i, j| if j == 0 { xs[i] } else { 4.0 });
        let p = GbmParams {
            n_trees: 2,
            max_depth: 1,
            learning_rate: 0.5,
            min_leaf: 1,
        };
        let ens = fit_gbm(&x, &y, &p).unwrap();
        // stage gains are the residual SSE: 8·(3/8)(5/8) = 1.875, then a quarter of it
        assert!((ens.trees[0].gains()[0] - 1.875).abs() < 1e-12);
        assert!((ens.trees[1].gains()[0] - 0.46875).abs() < 1e-12);
        let rep = gbm_importance(&ens, &names(2));
        assert_eq!(rep.scores, vec![100.0, 0.0]);
    }

    #[test]
    fn constant_target_gives_empty_ensemble() {
        let x = Matrix::from_fn(10, 2, |i, j| (i + j) as f64);
        let ens = fit_gbm(&x, &[3.0; 10], &GbmParams::default()).unwrap();
        assert!(ens.trees.is_empty());
        assert_eq!(ens.predict_row(&[1.0, 2.0]), 3.0);
        assert_eq!(gbm_importance(&ens, &names(2)).scores, vec![0.0, 0.0]);
    }

    #[test]
    fn staged_mse_never_increases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = normal_matrix(&mut rng, 300, 4);
        let y: Vec<f64> = (0..300)
            .map(|i| x[(i, 0)].sin() + x[(i, 1)] * x[(i, 2)] + z(&mut rng) * 0.3)
            .collect();
        let ens = fit_gbm(&x, &y, &GbmParams::default()).unwrap();
        assert_eq!(ens.staged_mse.len(), 201);
        for w in ens.staged_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn noise_feature_gets_little_importance() {
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = normal_matrix(&mut rng, 500, 3);
            let y: Vec<f64> = (0..500)
                .map(|i| 2.0 * x[(i, 0)] + x[(i, 1)] + 0.5 * z(&mut rng))
                .collect();
            let ens = fit_gbm(&x, &y, &GbmParams::default()).unwrap();
            let rep = gbm_importance(&ens, &names(3));
            assert!(rep.scores[2] < 5.0, "seed {seed}: {:?}", rep.scores);
            assert!((rep.scores.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_resample_equals_single_tree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = normal_matrix(&mut rng, 60, 3);
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)] - x[(i, 2)]).collect();
        let tp = TreeParams::default();
        let single = fit_tree(&x, &y, tp).unwrap();
        let bag = fit_bagging_with_samples(&x, &y, &[(0..60).collect()], tp).unwrap();
        assert_eq!(bag.trees[0], single);
        assert_eq!(bag.predict(&x), (0..60).map(|i| single.predict_row(x.row(i))).collect::<Vec<_>>());
    }

    #[test]
    fn bagging_is_tree_order_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = normal_matrix(&mut rng, 80, 2);
        let y: Vec<f64> = (0..80).map(|i| x[(i, 0)] * 2.0).collect();
        let ens = fit_bagging(&x, &y, &BaggingParams { n_trees: 7, ..Default::default() }, 3).unwrap();
        let mut rev = ens.clone();
        rev.trees.reverse();
        for i in 0..80 {
            assert!((ens.predict_row(x.row(i)) - rev.predict_row(x.row(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn oob_error_tracks_cv_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let x = normal_matrix(&mut rng, 400, 3);
        let y: Vec<f64> = (0..400)
            .map(|i| 1.5 * x[(i, 0)] - x[(i, 1)] + 0.5 * z(&mut rng))
            .collect();
        let p = BaggingParams {
            n_trees: 60,
            ..Default::default()
        };
        let oob = fit_bagging(&x, &y, &p, 9).unwrap().oob_mse.unwrap();
        let cv = cv_error(&ModelSpec::Bagging(p), &x, &y, 5, 9).unwrap();
        assert!((oob - cv).abs() <= 0.25 * cv, "oob {oob} cv {cv}");
    }

    #[test]
    fn knn_self_match_has_zero_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = normal_matrix(&mut rng, 50, 3);
        let y: Vec<f64> = (0..50).map(|i| x[(i, 0)]).collect();
        let m = KnnRegressor::fit(&x, &y, 1).unwrap();
        assert_eq!(m.predict(&x), y);
        assert_eq!(
            KnnRegressor::fit(&x, &y, 51).unwrap_err(),
            SelectError::KTooLarge { k: 51, n: 50 }
        );
    }

    #[test]
    fn knn_zero_variance_feature_scores_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut x = normal_matrix(&mut rng, 200, 3);
        for i in 0..200 {
            x[(i, 1)] = 2.0;
        }
        let y: Vec<f64> = (0..200).map(|i| x[(i, 0)] + 0.1 * x[(i, 2)]).collect();
        let rep = knn_importance(&x, &y, &names(3), &KnnParams::default(), 1).unwrap();
        assert_eq!(rep.scores[1], 0.0);
        assert!(rep.scores[0] > rep.scores[2]);
    }

    #[test]
    fn knn_duplicate_columns_share_importance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let base = normal_matrix(&mut rng, 400, 2);
        let y: Vec<f64> = (0..400)
            .map(|i| 2.0 * base[(i, 0)] + base[(i, 1)] + 0.3 * z(&mut rng))
            .collect();
        // columns: x0, copy of x0, x1
        let dup = Matrix::from_fn(400, 3, |i, j| if j < 2 { base[(i, 0)] } else { base[(i, 1)] });
        let p = KnnParams { k: 5, max_eval: 400 };
        let a = knn_importance(&base, &y, &names(2), &p, 2).unwrap();
        let b = knn_importance(&dup, &y, &names(3), &p, 2).unwrap();
        // the copies split the original share roughly evenly
        let share = b.scores[0] + b.scores[1];
        assert!((b.scores[0] - b.scores[1]).abs() < 0.25 * share, "{:?}", b.scores);
        assert!(share > b.scores[2] && a.scores[0] > a.scores[1]);
    }

    #[test]
    fn mean_model_cv_error_is_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Matrix::zeros(1000, 1);
        let cv = cv_error(&ModelSpec::Mean, &x, &y, 5, 3).unwrap();
        let m = y.iter().sum::<f64>() / 1000.0;
        let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 999.0;
        assert!((cv - var).abs() < 0.1 * var);
    }

    #[test]
    fn folds_are_seeded_partitions() {
        assert_eq!(fold_assignment(37, 5, 4), fold_assignment(37, 5, 4));
        assert_ne!(fold_assignment(37, 5, 4), fold_assignment(37, 5, 5));
        let a = fold_assignment(9, 9, 1);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn loocv_mean_model_closed_form() {
        // leaving out y_i, the mean of the rest misses by n/(n-1)·(y_i - ȳ)
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let x = Matrix::zeros(5, 1);
        let cv = cv_error(&ModelSpec::Mean, &x, &y, 5, 0).unwrap();
        let m = 4.0;
        let want = y.iter().map(|v| (1.25 * (v - m)) * (1.25 * (v - m))).sum::<f64>() / 5.0;
        assert!((cv - want).abs() < 1e-12);
    }

    #[test]
    fn quadratic_light_favours_low_degree_terms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let n = 800;
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..3.0)).collect();
        let y: Vec<f64> = l
            .iter()
            .map(|v| 0.1 * (v + 2.0) * (v + 2.0) + 0.3 * z(&mut rng))
            .collect();
        let x = crate::linear_models::raw_poly_basis(&l, 5);
        let ens = fit_gbm(&x, &y, &GbmParams::default()).unwrap();
        let rep = gbm_importance(&ens, &names(5));
        let low = rep.scores[0].min(rep.scores[1]);
        for d in 2..5 {
            assert!(rep.scores[d] < low, "{:?}", rep.scores);
        }
        assert_eq!(rep.features[0], "x0".to_string());
    }

    proptest! {
        #[test]
        fn reports_are_normalized(raw in proptest::collection::vec(0.0f64..50.0, 1..20)) {
            let s = normalize_to_100(&raw);
            prop_assert!(s.iter().all(|v| *v >= 0.0));
            if raw.iter().any(|v| *v > 0.0) {
                prop_assert!((s.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            }
        }
    }
}
