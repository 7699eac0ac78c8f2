//! Stage orchestration: inputs, merge, descriptive statistics, smoothing,
//! feature ranking, polynomial ANOVA, regressions, diagnostics and the
//! additive models, followed by the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lumenfit_core::data::{ChildObservation, ClusterId, Covariate, GeoCluster, LightRecord, Outcome};
use lumenfit_core::diagnostics::{wooldridge_ar1, lm_spatial_lag, DiagError, SpatialWeights};
use lumenfit_core::feature_select::{
    cv_error, ensemble_importance, fit_bagging, fit_gbm, gbm_importance, knn_importance, panel_features,
    BaggingParams, GbmParams, ImportanceMethod, ImportanceReport, KnnParams, ModelSpec, TreeParams,
};
use lumenfit_core::gam::{deviance_delta, fit_gam, fit_gam_tested, smooth_curve, GamSpec, LambdaChoice};
use lumenfit_core::geo::match_by_year;
use lumenfit_core::linalg::Matrix;
use lumenfit_core::linear_models::{anova_nested, build_design, fit_cluster_fe, fit_ols, FitResult, RegressionSpec};
use lumenfit_core::nonparam::{default_grid, local_poly_regress};
use lumenfit_core::panel::{build_panel, AnalysisPanel, MergeOptions};
use lumenfit_core::rng::derive_seed;
use lumenfit_core::summary::{kde, linspace, summary_stats};
use lumenfit_core::synth::{generate, ScenarioConfig};

use crate::config::{sha256_hex, ConfigError, PipelineConfig};
use crate::io::read_inputs;
use crate::report::{self, DiagnosticLine, SummaryRow, TableColumn};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREADS_ENV: &str = "LUMENFIT_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: &'static str, cause: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{THREADS_ENV}: {0}")]
    Threads(String),
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Self::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

fn fail<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        cause: e.to_string(),
    }
}

/// Analysis stages in run order. Loading and merging always run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Merge,
    Summarize,
    Kde,
    Npreg,
    Select,
    Anova,
    FitOls,
    FitFe,
    Diagnose,
    Gam,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Merge,
        Stage::Summarize,
        Stage::Kde,
        Stage::Npreg,
        Stage::Select,
        Stage::Anova,
        Stage::FitOls,
        Stage::FitFe,
        Stage::Diagnose,
        Stage::Gam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Merge => "merge",
            Self::Summarize => "summarize",
            Self::Kde => "kde",
            Self::Npreg => "npreg",
            Self::Select => "select",
            Self::Anova => "anova",
            Self::FitOls => "fit-ols",
            Self::FitFe => "fit-fe",
            Self::Diagnose => "diagnose",
            Self::Gam => "gam",
        }
    }
}

pub const ARTIFACT_CLASSES: [&str; 10] = [
    "merge_report",
    "summary",
    "kde_curves",
    "npreg_curves",
    "importance",
    "anova",
    "regressions",
    "diagnostics",
    "gam",
    "gam_curves",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub class: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEntry {
    pub role: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    /// Hashes of the input tables; empty for a generated scenario.
    pub inputs: Vec<InputEntry>,
    pub stages: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn classes(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.artifacts.iter().map(|a| a.class.as_str()).collect();
        c.dedup();
        c
    }
}

/// Worker count from `LUMENFIT_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, PipelineError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(PipelineError::Threads(format!("expected a positive integer, got `{v}`"))),
        },
    }
}

/// Loaded tables plus what the manifest records about them.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub clusters: Vec<GeoCluster>,
    pub lights: Vec<LightRecord>,
    pub children: Vec<ChildObservation>,
    pub inputs: Vec<InputEntry>,
}

/// The generated scenario used when no input tables are configured.
pub fn scenario_config(config: &PipelineConfig) -> ScenarioConfig {
    let mut s = ScenarioConfig::calibrated(derive_seed(config.seed, "scenario"));
    s.n_clusters = config.scenario_clusters;
    s.total_households = Some(config.scenario_households);
    s.rho = config.scenario_rho;
    s.neighbours = config.neighbours;
    s
}

pub fn load_data(config: &PipelineConfig) -> Result<LoadedData, PipelineError> {
    let stage = "load";
    match (&config.clusters, &config.lights, &config.children) {
        (Some(c), Some(l), Some(k)) => {
            let inputs = read_inputs(c, l, k).map_err(fail(stage))?;
            let mut entries = Vec::new();
            for (role, p) in [("clusters", c), ("lights", l), ("children", k)] {
                let bytes = fs::read(p).map_err(|e| PipelineError::Stage {
                    stage,
                    cause: format!("{}: {e}", p.display()),
                })?;
                entries.push(InputEntry {
                    role: role.to_string(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                });
            }
            Ok(LoadedData {
                clusters: inputs.clusters,
                lights: inputs.lights,
                children: inputs.children,
                inputs: entries,
            })
        }
        _ => {
            let data = generate(&scenario_config(config)).map_err(fail(stage))?;
            Ok(LoadedData {
                clusters: data.clusters,
                lights: data.lights,
                children: data.children,
                inputs: Vec::new(),
            })
        }
    }
}

/// Matches survey clusters to light clusters and builds the analysis panel.
pub fn merge(config: &PipelineConfig, data: &LoadedData) -> Result<(AnalysisPanel, lumenfit_core::panel::MergeReport), PipelineError> {
    let matching = match_by_year(&data.clusters, &data.lights, &data.children, config.radius_km).map_err(fail("merge"))?;
    let (panel, report) = build_panel(&data.children, &data.lights, &matching, &MergeOptions::default());
    if panel.is_empty() {
        return Err(PipelineError::Stage {
            stage: "merge",
            cause: "no child record survived the merge".into(),
        });
    }
    Ok((panel, report))
}

struct Output {
    class: &'static str,
    file: String,
    contents: String,
}

fn out(class: &'static str, file: &str, contents: String) -> Output {
    Output {
        class,
        file: file.to_string(),
        contents,
    }
}

/// Runs every stage with the worker count from the environment.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    run_stages(config, &Stage::ALL, threads_from_env()?)
}

/// Runs the requested stages (plus loading and merging) and writes their
/// artifacts and the manifest into `config.out_dir`. Nothing is left behind
/// when a stage fails.
pub fn run_stages(config: &PipelineConfig, stages: &[Stage], threads: Option<usize>) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| PipelineError::Threads(e.to_string()))?;
    let mut wanted: Vec<Stage> = stages.to_vec();
    wanted.push(Stage::Merge);
    wanted.sort_unstable();
    wanted.dedup();

    let (outputs, inputs) = pool.install(|| compute(config, &wanted))?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config: config.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        inputs,
        stages: wanted.iter().map(|s| s.name().to_string()).collect(),
        artifacts: outputs
            .iter()
            .map(|o| ArtifactEntry {
                class: o.class.to_string(),
                path: o.file.clone(),
                sha256: sha256_hex(o.contents.as_bytes()),
                bytes: o.contents.len() as u64,
            })
            .collect(),
    };
    let mut files: Vec<(String, String)> = outputs.into_iter().map(|o| (o.file, o.contents)).collect();
    files.push((MANIFEST_FILE.to_string(), manifest.to_json()));
    publish(&config.out_dir, &files)?;
    Ok(manifest)
}

/// Writes all files into a sibling staging directory, then moves them into
/// place. The staging directory is removed whatever happens.
fn publish(out_dir: &Path, files: &[(String, String)]) -> Result<(), PipelineError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Output { path, source }
    };
    let name = out_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    let result = (|| {
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        for (file, contents) in files {
            let p = staging.join(file);
            fs::write(&p, contents).map_err(io_err(&p))?;
        }
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        for (file, _) in files {
            let dst = out_dir.join(file);
            fs::rename(staging.join(file), &dst).map_err(io_err(&dst))?;
        }
        Ok(())
    })();
    let _ = fs::remove_dir_all(&staging);
    result
}

fn compute(config: &PipelineConfig, stages: &[Stage]) -> Result<(Vec<Output>, Vec<InputEntry>), PipelineError> {
    let data = load_data(config)?;
    let (panel, merge_report) = merge(config, &data)?;
    let mut outputs = Vec::new();
    for &stage in stages {
        match stage {
            Stage::Merge => {
                let (t, c) = report::merge_report(&merge_report);
                outputs.push(out("merge_report", "merge_report.txt", t));
                outputs.push(out("merge_report", "merge_report.csv", c));
            }
            Stage::Summarize => {
                let (t, c) = summary_stage(config, &panel)?;
                outputs.push(out("summary", "summary.txt", t));
                outputs.push(out("summary", "summary.csv", c));
            }
            Stage::Kde => outputs.push(out("kde_curves", "kde_curves.csv", kde_stage(config, &panel)?)),
            Stage::Npreg => outputs.push(out("npreg_curves", "npreg_curves.csv", npreg_stage(config, &panel)?)),
            Stage::Select => {
                let (imp, cvt, cvc) = select_stage(config, &panel)?;
                outputs.push(out("importance", "importance.csv", imp));
                outputs.push(out("importance", "cv_error.txt", cvt));
                outputs.push(out("importance", "cv_error.csv", cvc));
            }
            Stage::Anova => {
                let (t, c) = anova_stage(config, &panel)?;
                outputs.push(out("anova", "anova.txt", t));
                outputs.push(out("anova", "anova.csv", c));
            }
            Stage::FitOls => {
                let (t, c) = regress_stage(config, &panel, false)?;
                outputs.push(out("regressions", "regressions_ols.txt", t));
                outputs.push(out("regressions", "regressions_ols.csv", c));
            }
            Stage::FitFe => {
                let (t, c) = regress_stage(config, &panel, true)?;
                outputs.push(out("regressions", "regressions_fe.txt", t));
                outputs.push(out("regressions", "regressions_fe.csv", c));
            }
            Stage::Diagnose => {
                let (t, c) = diagnose_stage(config, &data, &panel)?;
                outputs.push(out("diagnostics", "diagnostics.txt", t));
                outputs.push(out("diagnostics", "diagnostics.csv", c));
            }
            Stage::Gam => {
                let (t, c, curves) = gam_stage(config, &panel)?;
                outputs.push(out("gam", "gam.txt", t));
                outputs.push(out("gam", "gam.csv", c));
                outputs.push(out("gam_curves", "gam_curves.csv", curves));
            }
        }
    }
    Ok((outputs, data.inputs))
}

/// Applies `f` to every configured outcome in parallel, keeping order.
fn per_outcome<T: Send>(
    config: &PipelineConfig,
    stage: &'static str,
    f: impl Fn(Outcome) -> Result<T, String> + Sync,
) -> Result<Vec<T>, PipelineError> {
    config
        .outcomes
        .par_iter()
        .map(|&o| {
            f(o).map_err(|cause| PipelineError::Stage {
                stage,
                cause: format!("{}: {cause}", o.name()),
            })
        })
        .collect()
}

fn year_means(panel: &AnalysisPanel, values: &[f64]) -> Vec<f64> {
    let years = panel.survey_years();
    panel
        .years
        .iter()
        .map(|&y| {
            let v: Vec<f64> = values.iter().zip(&years).filter(|(_, &yy)| yy == y).map(|(v, _)| *v).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect()
}

fn summary_stage(config: &PipelineConfig, panel: &AnalysisPanel) -> Result<(String, String), PipelineError> {
    let stage = "summarize";
    let mut vars: Vec<(String, Vec<f64>)> = vec![
        ("radiance".into(), panel.radiance()),
        ("log light".into(), panel.log_light()),
    ];
    for &o in &config.outcomes {
        vars.push((o.name().into(), panel.outcome(o).map_err(fail(stage))?));
    }
    for c in Covariate::ALL {
        vars.push((c.name().into(), panel.covariate(c).map_err(fail(stage))?));
    }
    let rows = vars
        .into_iter()
        .map(|(name, v)| {
            Ok(SummaryRow {
                pooled: summary_stats(&v).map_err(|e| PipelineError::Stage {
                    stage,
                    cause: format!("{name}: {e}"),
                })?,
                year_means: year_means(panel, &v),
                variable: name,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(report::summary_table("Summary statistics", &panel.years, &rows))
}

fn kde_stage(config: &PipelineConfig, panel: &AnalysisPanel) -> Result<String, PipelineError> {
    let stage = "kde";
    let ll = panel.log_light();
    let spec = config.kernel_spec();
    let h = spec.resolve(&ll).map_err(fail(stage))?;
    let lo = ll.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid = linspace(lo, hi, config.kde_points);
    let mut groups: Vec<(String, Vec<f64>)> = vec![("pooled".into(), ll.clone())];
    let years = panel.survey_years();
    for &y in &panel.years {
        groups.push((y.to_string(), ll.iter().zip(&years).filter(|(_, &yy)| yy == y).map(|(v, _)| *v).collect()));
    }
    let curves = groups
        .into_par_iter()
        .map(|(g, x)| {
            kde(&x, &spec, &grid).map(|d| (g.clone(), grid.clone(), d)).map_err(|e| PipelineError::Stage {
                stage,
                cause: format!("{g}: {e}"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(report::kde_csv(&curves))
}

fn npreg_stage(config: &PipelineConfig, panel: &AnalysisPanel) -> Result<String, PipelineError> {
    let x = panel.log_light();
    let grid = default_grid(&x, config.grid_points);
    let spec = config.kernel_spec();
    let curves = per_outcome(config, "npreg", |o| {
        let y = panel.outcome(o).map_err(|e| e.to_string())?;
        let c = local_poly_regress(&x, &y, config.npreg_degree, &spec, &grid).map_err(|e| e.to_string())?;
        Ok((o.name().to_string(), c))
    })?;
    Ok(report::npreg_csv(&curves))
}

fn select_stage(config: &PipelineConfig, panel: &AnalysisPanel) -> Result<(String, String, String), PipelineError> {
    let (x, names) = panel_features(panel, config.light_powers).map_err(fail("select"))?;
    let gbm = GbmParams {
        n_trees: config.gbm_trees,
        max_depth: config.gbm_depth,
        learning_rate: config.learning_rate,
        min_leaf: config.min_leaf,
    };
    let bagging = BaggingParams {
        n_trees: config.bagging_trees,
        tree: TreeParams {
            max_depth: None,
            min_leaf: config.min_leaf,
        },
    };
    let knn = KnnParams {
        k: config.knn_k,
        max_eval: config.knn_max_eval,
    };
    let results = per_outcome(config, "select", |o| {
        let e = |e: lumenfit_core::feature_select::SelectError| e.to_string();
        let y = panel.outcome(o).map_err(|e| e.to_string())?;
        let seed = derive_seed(config.seed, o.name());
        let cv = |m: &ModelSpec| cv_error(m, &x, &y, config.cv_folds, seed).map_err(e);
        let mut g: ImportanceReport = gbm_importance(&fit_gbm(&x, &y, &gbm).map_err(e)?, &names);
        g.cv_error = Some(cv(&ModelSpec::Gbm(gbm))?);
        let mut b = ensemble_importance(&fit_bagging(&x, &y, &bagging, seed).map_err(e)?, &names);
        b.cv_error = Some(cv(&ModelSpec::Bagging(bagging))?);
        let mut k = knn_importance(&x, &y, &names, &knn, seed).map_err(e)?;
        k.cv_error = Some(cv(&ModelSpec::Knn { k: knn.k })?);
        let mean = cv(&ModelSpec::Mean)?;
        Ok((o.name().to_string(), vec![g, b, k], mean))
    })?;
    let mut reports = Vec::new();
    let mut cv_rows = Vec::new();
    for (o, reps, mean) in results {
        cv_rows.push((o.clone(), "mean".to_string(), mean));
        for r in reps {
            let model = match r.method {
                ImportanceMethod::KnnPermutation => "knn",
                m => m.name(),
            };
            cv_rows.push((o.clone(), model.to_string(), r.cv_error.unwrap_or(f64::NAN)));
            reports.push((o.clone(), r));
        }
    }
    let (cvt, cvc) = report::cv_table(&cv_rows);
    Ok((report::importance_csv(&reports), cvt, cvc))
}

fn anova_stage(config: &PipelineConfig, panel: &AnalysisPanel) -> Result<(String, String), PipelineError> {
    let tables = per_outcome(config, "anova", |o| {
        let fits = (1..=config.max_degree)
            .map(|d| {
                let spec = RegressionSpec::benchmark(o, d).map_err(|e| e.to_string())?;
                fit_ols(panel, &spec).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<FitResult>, String>>()?;
        let mut t = anova_nested(&fits).map_err(|e| e.to_string())?;
        t.labels = (1..=config.max_degree).map(|d| format!("degree {d}")).collect();
        Ok((o, t))
    })?;
    let mut text = String::new();
    let mut csv = String::new();
    for (i, (o, t)) in tables.iter().enumerate() {
        let (tt, cc) = report::anova_table(&format!("Polynomial degree ANOVA: {}", o.name()), t);
        text.push_str(&tt);
        text.push('\n');
        // one CSV with an outcome column
        for (k, line) in cc.lines().enumerate() {
            if k == 0 {
                if i == 0 {
                    csv.push_str("outcome,");
                    csv.push_str(line);
                    csv.push('\n');
                }
            } else {
                csv.push_str(o.name());
                csv.push(',');
                csv.push_str(line);
                csv.push('\n');
            }
        }
    }
    Ok((text, csv))
}

fn regress_stage(config: &PipelineConfig, panel: &AnalysisPanel, fixed_effects: bool) -> Result<(String, String), PipelineError> {
    let stage = if fixed_effects { "fit-fe" } else { "fit-ols" };
    let fits = per_outcome(config, stage, |o| {
        let spec = RegressionSpec::benchmark(o, config.degree).map_err(|e| e.to_string())?;
        let fit = if fixed_effects {
            fit_cluster_fe(panel, &spec.with_fixed_effects(true))
        } else {
            fit_ols(panel, &spec)
        };
        Ok(TableColumn::from_fit(o.name(), &fit.map_err(|e| e.to_string())?))
    })?;
    let title = if fixed_effects {
        "Cluster fixed effects"
    } else {
        "Pooled OLS with survey-year dummy"
    };
    Ok(report::regression_table(title, &fits))
}

/// Cluster-level weights over the panel's light clusters, expanded to
/// children.
pub fn observation_weights(
    clusters: &[GeoCluster],
    panel: &AnalysisPanel,
    neighbours: usize,
) -> Result<(SpatialWeights, String), DiagError> {
    let mut by_id: BTreeMap<ClusterId, &GeoCluster> = BTreeMap::new();
    for c in clusters {
        by_id.entry(c.cluster_id).or_insert(c);
    }
    let points = panel
        .clusters
        .iter()
        .map(|id| by_id.get(id).map(|c| c.location).ok_or(DiagError::InvalidParameter("light cluster has no location")))
        .collect::<Result<Vec<_>, _>>()?;
    let base = SpatialWeights::knn(&points, neighbours)?.row_standardize();
    let label = format!("{} over {} light clusters; {}", base.describe(), base.n(), "expanded to children by cluster");
    Ok((base.expand_to_observations(&panel.cluster_index())?, label))
}

/// Cluster-by-round means of the outcome and regressors, for the serial
/// correlation test.
fn cluster_year_means(panel: &AnalysisPanel, y: &[f64], x: &Matrix) -> (Vec<f64>, Matrix, Vec<usize>, Vec<i32>) {
    let unit = panel.cluster_index();
    let years = panel.survey_years();
    let mut cells: BTreeMap<(usize, i32), Vec<usize>> = BTreeMap::new();
    for i in 0..y.len() {
        cells.entry((unit[i], years[i])).or_default().push(i);
    }
    let mut my = Vec::new();
    let mut mx: Vec<Vec<f64>> = Vec::new();
    let mut mu = Vec::new();
    let mut mt = Vec::new();
    for ((u, t), rows) in cells {
        let m = rows.len() as f64;
        my.push(rows.iter().map(|&i| y[i]).sum::<f64>() / m);
        mx.push((0..x.ncols()).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / m).collect());
        mu.push(u);
        mt.push(t);
    }
    let xm = Matrix::from_fn(my.len(), x.ncols(), |i, j| mx[i][j]);
    (my, xm, mu, mt)
}

fn diagnose_stage(config: &PipelineConfig, data: &LoadedData, panel: &AnalysisPanel) -> Result<(String, String), PipelineError> {
    let (w, label) = observation_weights(&data.clusters, panel, config.neighbours).map_err(fail("diagnose"))?;
    let per = per_outcome(config, "diagnose", |o| {
        let spec = RegressionSpec::benchmark(o, config.degree).map_err(|e| e.to_string())?;
        let d = build_design(panel, &spec).map_err(|e| e.to_string())?;
        let fit = fit_ols(panel, &spec).map_err(|e| e.to_string())?;
        let mut cols = vec![vec![1.0; d.y.len()]];
        cols.extend((0..d.x.ncols()).map(|j| d.x.column(j)));
        let xi = Matrix::from_columns(&cols).map_err(|e| e.to_string())?;
        let lm = lm_spatial_lag(&fit, &xi, &w).map_err(|e| e.to_string())?;
        // time-varying regressors only; the year dummy is collinear after differencing
        let keep: Vec<usize> = (0..d.x.ncols()).filter(|&j| !d.names[j].starts_with("year_")).collect();
        let (my, mx, mu, mt) = cluster_year_means(panel, &d.y, &d.x.select_columns(&keep));
        let wool = match wooldridge_ar1(&my, &mx, &mu, &mt) {
            Ok(t) => Ok(t),
            Err(DiagError::NotComputable) => Err("needs three or more survey rounds per cluster".to_string()),
            Err(e) => Err(e.to_string()),
        };
        Ok(vec![
            DiagnosticLine {
                outcome: o.name().into(),
                test: "LM spatial lag".into(),
                result: Ok(lm),
                weights: Some(label.clone()),
            },
            DiagnosticLine {
                outcome: o.name().into(),
                test: "Wooldridge AR(1)".into(),
                result: wool,
                weights: None,
            },
        ])
    })?;
    let lines: Vec<DiagnosticLine> = per.into_iter().flatten().collect();
    Ok(report::diagnostics_block(&lines))
}

fn gam_stage(config: &PipelineConfig, panel: &AnalysisPanel) -> Result<(String, String, String), PipelineError> {
    let ll = panel.log_light();
    let lo = ll.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = linspace(lo, hi, config.grid_points);
    let fits = per_outcome(config, "gam", |o| {
        let regression = RegressionSpec::benchmark(o, 1).map_err(|e| e.to_string())?;
        let smooth = GamSpec {
            regression: regression.clone(),
            smooth_k: Some(config.gam_k),
            lambda: LambdaChoice::Auto(config.gam_criterion),
        };
        let linear = GamSpec {
            regression,
            smooth_k: None,
            lambda: LambdaChoice::Fixed(0.0),
        };
        let (fit, test) = fit_gam_tested(panel, &smooth).map_err(|e| e.to_string())?;
        let base = fit_gam(panel, &linear).map_err(|e| e.to_string())?;
        let delta = deviance_delta(&fit, &base);
        let curve = smooth_curve(&fit, &grid).unwrap_or_default();
        Ok((o, fit, test, delta, curve))
    })?;
    let mut text = String::new();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (o, fit, test, delta, curve) in fits {
        let (t, r) = report::gam_block(o.name(), &fit, test.as_ref(), Some(delta));
        text.push_str(&t);
        text.push('\n');
        rows.extend(r);
        curves.push((o.name().to_string(), curve));
    }
    Ok((text, report::gam_csv(&rows), report::gam_curve_csv(&curves)))
}

/// Writes a generated scenario's tables (and its truth) to `dir`.
pub fn simulate(config: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let data = generate(&scenario_config(config)).map_err(fail("simulate"))?;
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    crate::io::write_synthetic(dir, &data).map_err(fail("simulate"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.scenario_clusters = 80;
        c.scenario_households = 900;
        c.gbm_trees = 10;
        c.bagging_trees = 5;
        c.knn_max_eval = 100;
        c.cv_folds = 2;
        c.max_degree = 3;
        c
    }

    #[test]
    fn stage_names_are_unique() {
        let mut n: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), Stage::ALL.len());
    }

    #[test]
    fn merge_of_a_small_scenario_keeps_rows() {
        let c = small();
        let data = load_data(&c).unwrap();
        let (panel, report) = merge(&c, &data).unwrap();
        assert_eq!(report.input_rows, 900);
        assert_eq!(panel.len(), report.retained);
        assert!(panel.len() > 800);
    }

    #[test]
    fn failing_stage_leaves_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.out_dir = dir.path().join("out");
        c.knn_k = 100_000;
        let err = run_stages(&c, &[Stage::Select], Some(1)).unwrap_err();
        assert_eq!(err.stage(), Some("select"));
        assert!(!c.out_dir.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
