//! Plain-text `key = value` configuration. Command-line flags are applied
//! on top through [`PipelineConfig::set`].

use std::path::{Path, PathBuf};

use lumenfit_core::gam::Criterion;
use lumenfit_core::summary::{Bandwidth, Kernel, KernelSpec};
use lumenfit_core::Outcome;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("`{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Input tables. When all three are absent the pipeline generates the
    /// calibrated synthetic scenario from `seed`.
    pub clusters: Option<PathBuf>,
    pub lights: Option<PathBuf>,
    pub children: Option<PathBuf>,
    pub scenario_clusters: usize,
    pub scenario_households: usize,
    pub scenario_rho: f64,
    pub radius_km: f64,
    pub outcomes: Vec<Outcome>,
    /// Largest polynomial degree compared by the ANOVA.
    pub max_degree: usize,
    /// Polynomial degree of the regression tables.
    pub degree: usize,
    /// Powers of log light offered to the feature rankers.
    pub light_powers: usize,
    pub gbm_trees: usize,
    pub gbm_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub bagging_trees: usize,
    pub knn_k: usize,
    pub knn_max_eval: usize,
    pub cv_folds: usize,
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    pub kde_points: usize,
    pub npreg_degree: usize,
    pub grid_points: usize,
    pub gam_k: usize,
    pub gam_criterion: Criterion,
    pub neighbours: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            clusters: None,
            lights: None,
            children: None,
            scenario_clusters: 600,
            scenario_households: 8734,
            scenario_rho: 0.3,
            radius_km: lumenfit_core::geo::DEFAULT_RADIUS_KM,
            outcomes: Outcome::ALL.to_vec(),
            max_degree: lumenfit_core::linear_models::MAX_DEGREE,
            degree: 1,
            light_powers: 4,
            gbm_trees: 200,
            gbm_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            bagging_trees: 100,
            knn_k: 10,
            knn_max_eval: 1000,
            cv_folds: 5,
            kernel: Kernel::Gaussian,
            bandwidth: Bandwidth::Silverman,
            kde_points: 200,
            npreg_degree: 1,
            grid_points: lumenfit_core::nonparam::DEFAULT_GRID_POINTS,
            gam_k: lumenfit_core::gam::DEFAULT_BASIS_DIM,
            gam_criterion: Criterion::Gcv,
            neighbours: lumenfit_core::diagnostics::DEFAULT_NEIGHBOURS,
            seed: 20240101,
            out_dir: PathBuf::from("lumenfit-out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn criterion_text(c: Criterion) -> String {
    match c {
        Criterion::Gcv => "gcv".to_string(),
        Criterion::Ubre { sigma2 } => format!("ubre:{sigma2}"),
    }
}

impl PipelineConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "clusters" => self.clusters = path(value),
            "lights" => self.lights = path(value),
            "children" => self.children = path(value),
            "scenario_clusters" => self.scenario_clusters = parse(key, value)?,
            "scenario_households" => self.scenario_households = parse(key, value)?,
            "scenario_rho" => self.scenario_rho = parse(key, value)?,
            "radius_km" => self.radius_km = parse(key, value)?,
            "outcomes" | "outcome" => {
                self.outcomes = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse::<Outcome>(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "max_degree" => self.max_degree = parse(key, value)?,
            "degree" => self.degree = parse(key, value)?,
            "light_powers" => self.light_powers = parse(key, value)?,
            "gbm_trees" => self.gbm_trees = parse(key, value)?,
            "gbm_depth" => self.gbm_depth = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "min_leaf" => self.min_leaf = parse(key, value)?,
            "bagging_trees" => self.bagging_trees = parse(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "knn_max_eval" => self.knn_max_eval = parse(key, value)?,
            "cv_folds" => self.cv_folds = parse(key, value)?,
            "kernel" => {
                self.kernel = match value.to_ascii_lowercase().as_str() {
                    "gaussian" => Kernel::Gaussian,
                    "epanechnikov" => Kernel::Epanechnikov,
                    _ => return Err(ConfigError::Value {
                        key: key.into(),
                        value: value.into(),
                    }),
                }
            }
            "bandwidth" => {
                self.bandwidth = if value.eq_ignore_ascii_case("silverman") {
                    Bandwidth::Silverman
                } else {
                    Bandwidth::Fixed(parse(key, value)?)
                }
            }
            "kde_points" => self.kde_points = parse(key, value)?,
            "npreg_degree" => self.npreg_degree = parse(key, value)?,
            "grid_points" => self.grid_points = parse(key, value)?,
            "gam_k" => self.gam_k = parse(key, value)?,
            "gam_criterion" => {
                let v = value.to_ascii_lowercase();
                self.gam_criterion = if v == "gcv" {
                    Criterion::Gcv
                } else if let Some(s) = v.strip_prefix("ubre:") {
                    Criterion::Ubre {
                        sigma2: parse(key, s)?,
                    }
                } else {
                    return Err(ConfigError::Value {
                        key: key.into(),
                        value: value.into(),
                    });
                }
            }
            "neighbours" => self.neighbours = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &'static str, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        let max = lumenfit_core::linear_models::MAX_DEGREE;
        if !(1..=max).contains(&self.max_degree) {
            return bad("max_degree", "must lie in 1..=5");
        }
        if !(1..=max).contains(&self.degree) {
            return bad("degree", "must lie in 1..=5");
        }
        if !(self.radius_km > 0.0) || !self.radius_km.is_finite() {
            return bad("radius_km", "must be positive");
        }
        if self.outcomes.is_empty() {
            return bad("outcomes", "at least one outcome is required");
        }
        let given = [&self.clusters, &self.lights, &self.children]
            .iter()
            .filter(|p| p.is_some())
            .count();
        if given != 0 && given != 3 {
            return bad("clusters", "give all three input tables or none");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds", "need at least two folds");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate", "must lie in (0, 1]");
        }
        if self.gam_k < 4 {
            return bad("gam_k", "basis dimension must be at least 4");
        }
        if self.grid_points < 2 || self.kde_points < 2 {
            return bad("grid_points", "need at least two grid points");
        }
        if self.light_powers == 0 {
            return bad("light_powers", "need at least one power of light");
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return bad("bandwidth", "must be positive or `silverman`");
            }
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            kernel: self.kernel,
            bandwidth: self.bandwidth,
        }
    }

    /// Every setting except `out_dir`, in a fixed order. Paths are printed
    /// as given.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let outcomes: Vec<&str> = self.outcomes.iter().map(|o| o.name()).collect();
        vec![
            ("clusters", p(&self.clusters)),
            ("lights", p(&self.lights)),
            ("children", p(&self.children)),
            ("scenario_clusters", self.scenario_clusters.to_string()),
            ("scenario_households", self.scenario_households.to_string()),
            ("scenario_rho", self.scenario_rho.to_string()),
            ("radius_km", self.radius_km.to_string()),
            ("outcomes", outcomes.join(",")),
            ("max_degree", self.max_degree.to_string()),
            ("degree", self.degree.to_string()),
            ("light_powers", self.light_powers.to_string()),
            ("gbm_trees", self.gbm_trees.to_string()),
            ("gbm_depth", self.gbm_depth.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("min_leaf", self.min_leaf.to_string()),
            ("bagging_trees", self.bagging_trees.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("knn_max_eval", self.knn_max_eval.to_string()),
            ("cv_folds", self.cv_folds.to_string()),
            ("kernel", self.kernel.name().to_string()),
            (
                "bandwidth",
                match self.bandwidth {
                    Bandwidth::Silverman => "silverman".to_string(),
                    Bandwidth::Fixed(h) => h.to_string(),
                },
            ),
            ("kde_points", self.kde_points.to_string()),
            ("npreg_degree", self.npreg_degree.to_string()),
            ("grid_points", self.grid_points.to_string()),
            ("gam_k", self.gam_k.to_string()),
            ("gam_criterion", criterion_text(self.gam_criterion)),
            ("neighbours", self.neighbours.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn canonical_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`Self::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = PipelineConfig::default();
        c.set("outcomes", "haz, waz").unwrap();
        c.set("gam_criterion", "ubre:1.5").unwrap();
        c.set("bandwidth", "0.25").unwrap();
        c.set("clusters", "a.csv").unwrap();
        let back = PipelineConfig::parse_str(&c.canonical_text()).unwrap();
        assert_eq!(back.pairs(), c.pairs());
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let c = PipelineConfig::parse_str("# run\n\nseed = 7 # trailing\nradius_km=2\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.radius_km, 2.0);
        assert!(matches!(PipelineConfig::parse_str("seed 7"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(PipelineConfig::parse_str("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(PipelineConfig::parse_str("seed = x"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn validation() {
        let mut c = PipelineConfig::default();
        c.max_degree = 6;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.lights = Some("l.csv".into());
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn out_dir_does_not_change_the_hash() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
