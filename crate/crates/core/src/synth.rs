//! Synthetic survey scenarios with known coefficients.
//!
//! Light clusters are scattered over a Bangladesh-sized box and every survey
//! round places its own cluster centroid within `jitter_km` of one of them.
//! Log radiance is a truncated normal, tied across rounds by a Gaussian
//! copula. Child z-scores are linear in powers of log light and in the
//! covariates, plus a cluster intercept with spatially autoregressive
//! structure and independent noise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use thiserror::Error;

use crate::data::{ChildObservation, ClusterId, Covariate, GeoCluster, LatLon, LightRecord, Outcome, WealthQuintile};
use crate::diagnostics::{DiagError, SpatialWeights};
use crate::geo::{destination, haversine};
use crate::rng::{derive_seed, stream, Stream};
use crate::special::{normal_cdf, normal_quantile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("at least one survey year is required")]
    NoYears,
    #[error("need at least {needed} clusters, got {found}")]
    TooFewClusters { needed: usize, found: usize },
    #[error("{0} light clusters do not fit the map at the minimum spacing")]
    TooManyClusters(usize),
    #[error("households per cluster must be positive")]
    NoHouseholds,
    #[error("{total} households cannot fill {sites} survey clusters")]
    Infeasible { total: usize, sites: usize },
    #[error("{0} must be a finite non-negative number")]
    NegativeSigma(String),
    #[error("spatial parameter rho = {0} must lie in (-1, 1)")]
    RhoOutOfRange(f64),
    #[error("year correlation {0} must lie in (-1, 1)")]
    CorrelationOutOfRange(f64),
    #[error("invalid log-light distribution: {0}")]
    LightParams(&'static str),
    #[error("share {0} must lie in [0, 1]")]
    Share(f64),
    #[error("outcome {outcome}: expected {expected} year effects, got {found}")]
    YearEffects {
        outcome: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("outcome {0} is binary; configure its z-score instead")]
    BinaryOutcome(&'static str),
    #[error(transparent)]
    Weights(#[from] DiagError),
}

/// Truncated normal for log radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLightParams {
    pub loc: f64,
    pub scale: f64,
    pub lower: f64,
    pub upper: f64,
    /// Change in `loc` between consecutive rounds, centered so the pooled
    /// location stays at `loc`.
    pub year_shift: f64,
    /// Copula correlation between consecutive rounds of one cluster.
    pub year_correlation: f64,
}

impl Default for LogLightParams {
    fn default() -> Self {
        Self {
            loc: -1.00646,
            scale: 2.03095,
            lower: 0.00023f64.ln(),
            upper: 29.94f64.ln(),
            year_shift: 0.09,
            year_correlation: 0.95,
        }
    }
}

impl LogLightParams {
    fn loc_for(&self, year_index: usize, n_years: usize) -> f64 {
        self.loc + self.year_shift * (year_index as f64 - (n_years as f64 - 1.0) / 2.0)
    }

    /// Log radiance for latent standard normal `z`.
    pub fn quantile(&self, z: f64, loc: f64) -> f64 {
        let a = normal_cdf((self.lower - loc) / self.scale);
        let b = normal_cdf((self.upper - loc) / self.scale);
        let p = a + normal_cdf(z) * (b - a);
        (loc + self.scale * normal_quantile(p)).clamp(self.lower, self.upper)
    }
}

/// Data-generating coefficients for one z-score outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTruth {
    pub outcome: Outcome,
    pub intercept: f64,
    /// Coefficients on log light, (log light)², ...
    pub light: Vec<f64>,
    pub covariates: Vec<(Covariate, f64)>,
    /// One per survey year after the first.
    pub year_effects: Vec<f64>,
    /// Innovation sd of the cluster intercept.
    pub cluster_sigma: f64,
    pub noise_sigma: f64,
}

/// Pooled means of the attributes as generated by [`generate`].
pub fn covariate_mean(c: Covariate) -> f64 {
    match c {
        Covariate::MotherEducYears => 3.215,
        Covariate::FatherEducYears => 3.490,
        Covariate::MotherAgeFirstBirth => 18.140,
        Covariate::BirthOrder => 2.298,
        Covariate::MotherBmi => 2120.879,
        Covariate::ChildAgeMonths => 2.0,
        Covariate::ChildSex => 0.515,
        Covariate::WealthPoorest => WEALTH_SHARES[0],
        Covariate::WealthPoorer => WEALTH_SHARES[1],
        Covariate::WealthMiddle => WEALTH_SHARES[2],
        Covariate::WealthRicher => WEALTH_SHARES[3],
        Covariate::WealthRichest => WEALTH_SHARES[4],
        Covariate::OwnsTv => 0.409,
        Covariate::HasElectricity => 0.602,
    }
}

const WEALTH_SHARES: [f64; 5] = [0.221, 0.193, 0.191, 0.200, 0.195];
const POOLED_LOG_LIGHT_MEAN: f64 = -1.09;

impl OutcomeTruth {
    /// Sets the intercept so the outcome mean lands near `target` for a
    /// two-round scenario with the default light distribution.
    pub fn centered(
        outcome: Outcome,
        target: f64,
        light: Vec<f64>,
        covariates: Vec<(Covariate, f64)>,
        year_effects: Vec<f64>,
        cluster_sigma: f64,
        noise_sigma: f64,
    ) -> Self {
        let mut intercept = target;
        for (k, b) in light.iter().enumerate() {
            if k == 0 {
                intercept -= b * POOLED_LOG_LIGHT_MEAN;
            }
        }
        for (c, g) in &covariates {
            intercept -= g * covariate_mean(*c);
        }
        let n_years = year_effects.len() + 1;
        intercept -= year_effects.iter().sum::<f64>() / n_years as f64;
        Self {
            outcome,
            intercept,
            light,
            covariates,
            year_effects,
            cluster_sigma,
            noise_sigma,
        }
    }

    pub fn light_degree(&self) -> usize {
        self.light.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub years: Vec<i32>,
    /// Light clusters; each round surveys one site near every one of them.
    pub n_clusters: usize,
    pub households_per_cluster: usize,
    /// When set, overrides `households_per_cluster` and is spread evenly
    /// over rounds and sites.
    pub total_households: Option<usize>,
    pub light: LogLightParams,
    pub outcomes: Vec<OutcomeTruth>,
    /// Spatial autoregressive parameter of the cluster intercepts.
    pub rho: f64,
    pub neighbours: usize,
    /// Maximum distance between a survey site and its light cluster.
    pub jitter_km: f64,
    /// Share of children with one covariate missing.
    pub incomplete_share: f64,
    /// Survey sites per round with no light cluster nearby.
    pub decoy_clusters: usize,
}

impl ScenarioConfig {
    /// Two rounds, 600 light clusters, 8734 children and marginals at the
    /// pooled survey summary statistics.
    pub fn calibrated(seed: u64) -> Self {
        use Covariate::*;
        let outcomes = vec![
            OutcomeTruth::centered(
                Outcome::Haz,
                -1.6,
                vec![0.10],
                vec![
                    (MotherEducYears, 0.06),
                    (MotherAgeFirstBirth, 0.04),
                    (ChildAgeMonths, -0.20),
                    (WealthPoorest, -0.25),
                    (HasElectricity, 0.10),
                ],
                vec![0.10],
                0.35,
                1.20,
            ),
            OutcomeTruth::centered(
                Outcome::Whz,
                -0.91,
                vec![0.05],
                vec![
                    (MotherEducYears, 0.04),
                    (MotherAgeFirstBirth, 0.02),
                    (ChildAgeMonths, 0.05),
                    (WealthPoorest, -0.15),
                    (HasElectricity, 0.05),
                ],
                vec![0.05],
                0.25,
                1.10,
            ),
            OutcomeTruth::centered(
                Outcome::Waz,
                -1.54,
                vec![0.08],
                vec![
                    (MotherEducYears, 0.05),
                    (MotherAgeFirstBirth, 0.03),
                    (ChildAgeMonths, -0.10),
                    (WealthPoorest, -0.20),
                    (HasElectricity, 0.08),
                ],
                vec![0.09],
                0.30,
                1.05,
            ),
        ];
        Self {
            seed,
            years: vec![2011, 2014],
            n_clusters: 600,
            households_per_cluster: 7,
            total_households: Some(8734),
            light: LogLightParams::default(),
            outcomes,
            rho: 0.3,
            neighbours: 5,
            jitter_km: 1.0,
            incomplete_share: 0.0,
            decoy_clusters: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.years.is_empty() {
            return Err(SynthError::NoYears);
        }
        if self.n_clusters > MAX_CLUSTERS {
            return Err(SynthError::TooManyClusters(self.n_clusters));
        }
        if self.n_clusters < self.neighbours + 1 || self.n_clusters < 2 {
            return Err(SynthError::TooFewClusters {
                needed: (self.neighbours + 1).max(2),
                found: self.n_clusters,
            });
        }
        let sites = self.n_clusters * self.years.len();
        match self.total_households {
            Some(t) if t < sites => return Err(SynthError::Infeasible { total: t, sites }),
            None if self.households_per_cluster == 0 => return Err(SynthError::NoHouseholds),
            _ => {}
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(SynthError::RhoOutOfRange(self.rho));
        }
        let l = &self.light;
        if !(l.year_correlation > -1.0 && l.year_correlation < 1.0) {
            return Err(SynthError::CorrelationOutOfRange(l.year_correlation));
        }
        if !(l.scale > 0.0) || !l.scale.is_finite() {
            return Err(SynthError::LightParams("scale must be positive"));
        }
        if !(l.lower < l.upper) || !l.loc.is_finite() || !l.year_shift.is_finite() {
            return Err(SynthError::LightParams("bounds must be increasing and finite"));
        }
        if l.upper > crate::data::MAX_RADIANCE.ln() {
            return Err(SynthError::LightParams("upper bound beyond the radiance scale"));
        }
        if !(0.0..=1.0).contains(&self.incomplete_share) {
            return Err(SynthError::Share(self.incomplete_share));
        }
        if !(self.jitter_km >= 0.0) || !self.jitter_km.is_finite() {
            return Err(SynthError::NegativeSigma("jitter_km".to_string()));
        }
        for o in &self.outcomes {
            if o.outcome.is_binary() {
                return Err(SynthError::BinaryOutcome(o.outcome.name()));
            }
            for (name, v) in [("cluster_sigma", o.cluster_sigma), ("noise_sigma", o.noise_sigma)] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(SynthError::NegativeSigma(format!("{}.{name}", o.outcome.name())));
                }
            }
            if o.year_effects.len() != self.years.len() - 1 {
                return Err(SynthError::YearEffects {
                    outcome: o.outcome.name(),
                    expected: self.years.len() - 1,
                    found: o.year_effects.len(),
                });
            }
        }
        Ok(())
    }

    fn households_at(&self, year_index: usize, site: usize) -> usize {
        match self.total_households {
            None => self.households_per_cluster,
            Some(total) => {
                let ny = self.years.len();
                let per_year = total / ny + usize::from(year_index < total % ny);
                per_year / self.n_clusters + usize::from(site < per_year % self.n_clusters)
            }
        }
    }
}

/// One coefficient or scenario parameter used by the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    /// Outcome name, or `scenario` for parameters shared by all outcomes.
    pub outcome: String,
    pub term: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub clusters: Vec<GeoCluster>,
    pub lights: Vec<LightRecord>,
    pub children: Vec<ChildObservation>,
    pub truth: Vec<TruthRecord>,
}

// survey site ids: 10001.. for the first round, 20001.. for the second
fn site_id(year_index: usize, site: usize) -> ClusterId {
    ((year_index + 1) * 10_000 + site + 1) as ClusterId
}

const MIN_SEPARATION_KM: f64 = 5.0;
// comfortably below the packing limit of the box at that spacing
pub const MAX_CLUSTERS: usize = 5000;
const LAT_RANGE: (f64, f64) = (20.8, 26.5);
const LON_RANGE: (f64, f64) = (88.1, 92.6);
// decoys sit in the bay, at least 30 km south of any light cluster
const DECOY_LAT: (f64, f64) = (19.6, 20.5);

fn division(loc: LatLon) -> &'static str {
    let (lat, lon) = (loc.lat(), loc.lon());
    if lat > 25.0 {
        if lon < 89.8 { "Rangpur" } else { "Sylhet" }
    } else if lat > 24.0 {
        if lon < 89.5 { "Rajshahi" } else if lon < 91.0 { "Dhaka" } else { "Sylhet" }
    } else if lat > 22.8 {
        if lon < 89.8 { "Khulna" } else if lon < 91.0 { "Dhaka" } else { "Chittagong" }
    } else if lon < 90.6 {
        "Barisal"
    } else {
        "Chittagong"
    }
}

fn std_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

/// Cluster intercepts u = ρWu + σe, solved by fixed-point iteration.
fn sar_effects(w: &SpatialWeights, rho: f64, sigma: f64, rng_seed: u64) -> Vec<f64> {
    let n = w.n();
    let e: Vec<f64> = (0..n)
        .map(|c| sigma * std_normal(&mut stream(rng_seed, c as u64)))
        .collect();
    let mut u = e.clone();
    if rho == 0.0 {
        return u;
    }
    for _ in 0..10_000 {
        let lag = w.lag(&u);
        let next: Vec<f64> = e.iter().zip(&lag).map(|(a, b)| a + rho * b).collect();
        let delta = next.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        u = next;
        if delta < 1e-13 * (1.0 + sigma) {
            break;
        }
    }
    u
}

struct Household {
    covariates: ChildObservation,
    latent_wealth: f64,
}

fn draw_household(rng: &mut Stream, light_z: f64) -> Household {
    let mut c = ChildObservation::default();
    let educ_m = 3.215 + 1.522 * std_normal(rng);
    let educ_f = 3.490 + 1.566 * (0.5 * (educ_m - 3.215) / 1.522 + 0.75f64.sqrt() * std_normal(rng));
    c.mother_educ_years = Some(educ_m.clamp(0.0, 8.0));
    c.father_educ_years = Some(educ_f.clamp(0.0, 8.0));
    c.mother_age_first_birth = Some((18.14 + 3.285 * std_normal(rng)).clamp(11.0, 46.0));
    // overdispersed count so the sd comes out near 1.5
    let lam: f64 = Gamma::new(1.69, 1.298 / 1.69).expect("valid").sample(rng);
    let extra: f64 = if lam > 0.0 {
        Poisson::new(lam).expect("positive rate").sample(rng)
    } else {
        0.0
    };
    c.birth_order = Some((1.0 + extra).min(14.0));
    c.mother_bmi = Some((2120.879 + 373.003 * std_normal(rng)).clamp(1220.0, 4549.0));
    c.child_age_months = Some(f64::from(rng.random_range(0u8..=4)));
    c.child_sex = Some(rng.random_bool(0.515));
    let w = 0.5 * light_z + 0.75f64.sqrt() * std_normal(rng);
    let mut cum = 0.0;
    let mut q = WealthQuintile::Richest;
    for (i, share) in WEALTH_SHARES.iter().enumerate() {
        cum += share;
        if i == 4 || w < normal_quantile(cum) {
            q = WealthQuintile::ALL[i];
            break;
        }
    }
    c.wealth_quintile = Some(q);
    c.owns_tv = Some(0.6 * w + 0.8 * std_normal(rng) > normal_quantile(1.0 - 0.409));
    c.has_electricity = Some(0.6 * w + 0.8 * std_normal(rng) > normal_quantile(1.0 - 0.602));
    Household {
        covariates: c,
        latent_wealth: w,
    }
}

fn blank_covariate(c: &mut ChildObservation, which: usize) {
    match which {
        0 => c.mother_educ_years = None,
        1 => c.father_educ_years = None,
        2 => c.mother_age_first_birth = None,
        3 => c.birth_order = None,
        4 => c.mother_bmi = None,
        5 => c.child_age_months = None,
        6 => c.child_sex = None,
        7 => c.wealth_quintile = None,
        8 => c.owns_tv = None,
        _ => c.has_electricity = None,
    }
}

fn outcome_value(t: &OutcomeTruth, child: &ChildObservation, log_light: f64, year_index: usize, u: f64, e: f64) -> f64 {
    let mut y = t.intercept + u + e;
    let mut p = 1.0;
    for b in &t.light {
        p *= log_light;
        y += b * p;
    }
    for (c, g) in &t.covariates {
        y += g * child.covariate(*c).unwrap_or_else(|| covariate_mean(*c));
    }
    if year_index > 0 {
        y += t.year_effects[year_index - 1];
    }
    y
}

pub fn generate(config: &ScenarioConfig) -> Result<SyntheticData, SynthError> {
    config.validate()?;
    let n = config.n_clusters;
    let ny = config.years.len();
    let seed = config.seed;

    let mut loc_rng = stream(derive_seed(seed, "locations"), 0);
    // light clusters keep apart so every survey site has one obvious match
    let mut light_sites: Vec<LatLon> = Vec::with_capacity(n);
    while light_sites.len() < n {
        let lat = loc_rng.random_range(LAT_RANGE.0..LAT_RANGE.1);
        let lon = loc_rng.random_range(LON_RANGE.0..LON_RANGE.1);
        let p = LatLon::new(lat, lon).expect("inside the box");
        if light_sites.iter().all(|&q| haversine(p, q) >= MIN_SEPARATION_KM) {
            light_sites.push(p);
        }
    }

    let mut clusters: Vec<GeoCluster> = light_sites
        .iter()
        .enumerate()
        .map(|(c, &location)| GeoCluster {
            cluster_id: (c + 1) as ClusterId,
            location,
            division: division(location).to_string(),
            survey_year: config.years[0],
        })
        .collect();

    // latent copula draws per cluster and round; the first round is
    // stratified (one draw per 1/n slice of the unit interval) so the light
    // marginal holds at a few hundred clusters
    let r = config.light.year_correlation;
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(&mut stream(derive_seed(seed, "light-strata"), 0));
    let latent: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut rng = stream(derive_seed(seed, "lights"), c as u64);
            let mut z = Vec::with_capacity(ny);
            let u = (strata[c] as f64 + rng.random_range(0.0..1.0)) / n as f64;
            let mut prev = normal_quantile(u.clamp(1e-12, 1.0 - 1e-12));
            z.push(prev);
            for _ in 1..ny {
                prev = r * prev + (1.0 - r * r).sqrt() * std_normal(&mut rng);
                z.push(prev);
            }
            z
        })
        .collect();
    let log_light: Vec<Vec<f64>> = latent
        .iter()
        .map(|zs| {
            zs.iter()
                .enumerate()
                .map(|(yi, &z)| config.light.quantile(z, config.light.loc_for(yi, ny)))
                .collect()
        })
        .collect();
    let mut lights = Vec::with_capacity(n * ny);
    for (yi, &year) in config.years.iter().enumerate() {
        for c in 0..n {
            lights.push(
                LightRecord::new((c + 1) as ClusterId, year, log_light[c][yi].exp())
                    .expect("bounded by the validated range"),
            );
        }
    }

    let w = SpatialWeights::knn(&light_sites, config.neighbours)?.row_standardize();
    let effects: Vec<Vec<f64>> = config
        .outcomes
        .iter()
        .map(|t| {
            let label = format!("cluster-effects/{}", t.outcome.name());
            sar_effects(&w, config.rho, t.cluster_sigma, derive_seed(seed, &label))
        })
        .collect();

    let mut children = Vec::new();
    let mut next_child: u64 = 1;
    let noise_seed = derive_seed(seed, "households");
    let sites_seed = derive_seed(seed, "survey-sites");
    for (yi, &year) in config.years.iter().enumerate() {
        for c in 0..n {
            let flat = (yi * n + c) as u64;
            let mut site_rng = stream(sites_seed, flat);
            let bearing = site_rng.random_range(0.0..360.0);
            let dist = config.jitter_km * site_rng.random_range(0.0f64..1.0).sqrt();
            let location = destination(light_sites[c], bearing, dist);
            let id = site_id(yi, c);
            clusters.push(GeoCluster {
                cluster_id: id,
                location,
                division: division(location).to_string(),
                survey_year: year,
            });
            let mut rng = stream(noise_seed, flat);
            for _ in 0..config.households_at(yi, c) {
                let hh = draw_household(&mut rng, latent[c][yi]);
                let mut child = hh.covariates;
                let _ = hh.latent_wealth;
                child.child_id = next_child;
                next_child += 1;
                child.cluster_id = id;
                child.survey_year = year;
                for (o, t) in config.outcomes.iter().enumerate() {
                    let e = t.noise_sigma * std_normal(&mut rng);
                    let y = outcome_value(t, &child, log_light[c][yi], yi, effects[o][c], e);
                    set_outcome(&mut child, t.outcome, y);
                }
                if config.incomplete_share > 0.0 && rng.random_bool(config.incomplete_share) {
                    let which = rng.random_range(0..10);
                    blank_covariate(&mut child, which);
                }
                children.push(child);
            }
        }
    }

    // sites with no light cluster within reach
    let decoy_seed = derive_seed(seed, "decoys");
    for (yi, &year) in config.years.iter().enumerate() {
        for d in 0..config.decoy_clusters {
            let mut rng = stream(decoy_seed, (yi * config.decoy_clusters + d) as u64);
            let location = LatLon::new(
                rng.random_range(DECOY_LAT.0..DECOY_LAT.1),
                rng.random_range(LON_RANGE.0..LON_RANGE.1),
            )
            .expect("inside the box");
            let id = site_id(yi, n + d);
            clusters.push(GeoCluster {
                cluster_id: id,
                location,
                division: "Barisal".to_string(),
                survey_year: year,
            });
            let z = std_normal(&mut rng);
            let ll = config.light.quantile(z, config.light.loc_for(yi, ny));
            for _ in 0..config.households_per_cluster.max(1) {
                let mut child = draw_household(&mut rng, z).covariates;
                child.child_id = next_child;
                next_child += 1;
                child.cluster_id = id;
                child.survey_year = year;
                for t in &config.outcomes {
                    let e = t.noise_sigma * std_normal(&mut rng);
                    let y = outcome_value(t, &child, ll, yi, 0.0, e);
                    set_outcome(&mut child, t.outcome, y);
                }
                children.push(child);
            }
        }
    }

    Ok(SyntheticData {
        clusters,
        lights,
        children,
        truth: truth_records(config),
    })
}

fn set_outcome(child: &mut ChildObservation, o: Outcome, y: f64) {
    match o {
        Outcome::Haz => {
            child.haz = Some(y);
            child.stunted = Some(y < -2.0);
        }
        Outcome::Whz => {
            child.whz = Some(y);
            child.wasted = Some(y < -2.0);
        }
        Outcome::Waz => {
            child.waz = Some(y);
            child.underweight = Some(y < -2.0);
        }
        _ => unreachable!("binary outcomes are rejected by validation"),
    }
}

fn truth_records(config: &ScenarioConfig) -> Vec<TruthRecord> {
    let rec = |outcome: &str, term: String, value: f64| TruthRecord {
        outcome: outcome.to_string(),
        term,
        value,
    };
    let l = &config.light;
    let mut out = vec![
        rec("scenario", "seed".into(), config.seed as f64),
        rec("scenario", "n_clusters".into(), config.n_clusters as f64),
        rec("scenario", "rho".into(), config.rho),
        rec("scenario", "neighbours".into(), config.neighbours as f64),
        rec("scenario", "log_light_loc".into(), l.loc),
        rec("scenario", "log_light_scale".into(), l.scale),
        rec("scenario", "log_light_lower".into(), l.lower),
        rec("scenario", "log_light_upper".into(), l.upper),
        rec("scenario", "log_light_year_shift".into(), l.year_shift),
        rec("scenario", "year_correlation".into(), l.year_correlation),
        rec("scenario", "jitter_km".into(), config.jitter_km),
        rec("scenario", "incomplete_share".into(), config.incomplete_share),
        rec("scenario", "decoy_clusters".into(), config.decoy_clusters as f64),
    ];
    for t in &config.outcomes {
        let o = t.outcome.name();
        out.push(rec(o, "(Intercept)".into(), t.intercept));
        for (k, b) in t.light.iter().enumerate() {
            let term = if k == 0 { "light".to_string() } else { format!("light^{}", k + 1) };
            out.push(rec(o, term, *b));
        }
        for (c, g) in &t.covariates {
            out.push(rec(o, c.name().to_string(), *g));
        }
        for (y, e) in config.years[1..].iter().zip(&t.year_effects) {
            out.push(rec(o, format!("year_{y}"), *e));
        }
        out.push(rec(o, "cluster_sigma".into(), t.cluster_sigma));
        out.push(rec(o, "noise_sigma".into(), t.noise_sigma));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::morans_i;
    use crate::geo::match_by_year;
    use crate::linear_models::{fit_ols, RegressionSpec, SeKind};
    use crate::panel::{build_panel, MergeOptions};

    fn small(seed: u64) -> ScenarioConfig {
        let mut c = ScenarioConfig::calibrated(seed);
        c.n_clusters = 120;
        c.total_households = Some(1200);
        c
    }

    fn panel_of(d: &SyntheticData) -> crate::AnalysisPanel {
        let m = match_by_year(&d.clusters, &d.lights, &d.children, 1.5).unwrap();
        build_panel(&d.children, &d.lights, &m, &MergeOptions::default()).0
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(4)).unwrap();
        assert_ne!(a.children, c.children);
    }

    #[test]
    fn calibrated_scenario_hits_radiance_mean() {
        let d = generate(&ScenarioConfig::calibrated(11)).unwrap();
        assert_eq!(d.children.len(), 8734);
        let p = panel_of(&d);
        assert_eq!(p.len(), 8734);
        let mean = p.radiance().iter().sum::<f64>() / p.len() as f64;
        assert!((1.46..=1.78).contains(&mean), "{mean}");
    }

    // mean and sd of exp(X), X truncated normal, by quadrature
    fn truncated_lognormal_moments(l: &LogLightParams, loc: f64) -> (f64, f64) {
        let m = 200_000;
        let h = (l.upper - l.lower) / m as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=m {
            let x = l.lower + i as f64 * h;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            let d = w * (-0.5 * ((x - loc) / l.scale).powi(2)).exp();
            z += d;
            m1 += d * x.exp();
            m2 += d * (2.0 * x).exp();
        }
        let mean = m1 / z;
        (mean, (m2 / z - mean * mean).sqrt())
    }

    #[test]
    fn light_marginals_match_configuration() {
        let mut c = ScenarioConfig::calibrated(5);
        c.n_clusters = 5000;
        c.years = vec![2011];
        c.total_households = None;
        c.households_per_cluster = 1;
        for o in c.outcomes.iter_mut() {
            o.year_effects.clear();
        }
        let d = generate(&c).unwrap();
        let r: Vec<f64> = d.lights.iter().map(|l| l.radiance()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        let (m0, s0) = truncated_lognormal_moments(&c.light, c.light.loc);
        assert!((mean / m0 - 1.0).abs() < 0.10, "{mean} vs {m0}");
        assert!((sd / s0 - 1.0).abs() < 0.10, "{sd} vs {s0}");
        assert!(r.iter().all(|v| *v >= 0.00023 * 0.999_999 && *v <= 29.94 * 1.000_001));
    }

    #[test]
    fn identifiers_follow_the_layout() {
        let mut c = small(1);
        c.decoy_clusters = 3;
        let d = generate(&c).unwrap();
        let light_ids: Vec<u32> = d.lights.iter().filter(|l| l.year() == 2011).map(|l| l.cluster_id()).collect();
        assert_eq!(light_ids, (1..=120).collect::<Vec<_>>());
        assert!(d.clusters.iter().filter(|g| g.survey_year == 2014 && g.cluster_id > 1000).all(|g| (20001..30000).contains(&g.cluster_id)));
        let m = match_by_year(&d.clusters, &d.lights, &d.children, 1.5).unwrap();
        let (_, report) = build_panel(&d.children, &d.lights, &m, &MergeOptions::default());
        assert_eq!(report.dropped_for(crate::panel::DropReason::NoLightWithinRadius), 2 * 3 * 7);
        assert_eq!(report.retained, 1200);
    }

    #[test]
    fn incomplete_share_drops_rows() {
        let mut c = small(2);
        c.incomplete_share = 0.2;
        let d = generate(&c).unwrap();
        let p = panel_of(&d);
        let kept = p.len() as f64 / 1200.0;
        assert!((0.72..0.88).contains(&kept), "{kept}");
    }

    #[test]
    fn truth_lists_every_coefficient() {
        let c = small(1);
        let d = generate(&c).unwrap();
        for t in &c.outcomes {
            let n = d.truth.iter().filter(|r| r.outcome == t.outcome.name()).count();
            assert_eq!(n, 1 + t.light.len() + t.covariates.len() + t.year_effects.len() + 2);
        }
        assert!(d.truth.iter().any(|r| r.term == "rho"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small(1);
        c.total_households = None;
        c.households_per_cluster = 0;
        assert_eq!(generate(&c).unwrap_err(), SynthError::NoHouseholds);
        let mut c = small(1);
        c.rho = 1.0;
        assert!(matches!(generate(&c), Err(SynthError::RhoOutOfRange(_))));
        let mut c = small(1);
        c.outcomes[0].noise_sigma = -1.0;
        assert!(matches!(generate(&c), Err(SynthError::NegativeSigma(_))));
        let mut c = small(1);
        c.total_households = Some(10);
        assert!(matches!(generate(&c), Err(SynthError::Infeasible { .. })));
        let mut c = small(1);
        c.years.clear();
        assert_eq!(generate(&c).unwrap_err(), SynthError::NoYears);
        let mut c = small(1);
        c.outcomes[0].outcome = Outcome::Stunted;
        assert!(matches!(generate(&c), Err(SynthError::BinaryOutcome(_))));
    }

    #[test]
    fn binaries_follow_z_scores() {
        let d = generate(&small(6)).unwrap();
        for c in &d.children {
            assert_eq!(c.stunted, Some(c.haz.unwrap() < -2.0));
            assert_eq!(c.underweight, Some(c.waz.unwrap() < -2.0));
        }
        let stunted = d.children.iter().filter(|c| c.stunted == Some(true)).count() as f64 / d.children.len() as f64;
        assert!((0.2..0.5).contains(&stunted));
    }

    // cluster-mean residuals from the benchmark fit against the 5-NN weights
    fn residual_moran_z(c: &ScenarioConfig) -> f64 {
        let d = generate(c).unwrap();
        let p = panel_of(&d);
        let fit = fit_ols(&p, &RegressionSpec::benchmark(Outcome::Haz, 1).unwrap().with_se(SeKind::Classical)).unwrap();
        let g = p.n_clusters();
        let mut sum = vec![0.0; g];
        let mut cnt = vec![0.0; g];
        for (row, e) in p.rows.iter().zip(&fit.residuals) {
            sum[row.cluster_index] += e;
            cnt[row.cluster_index] += 1.0;
        }
        let means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, n)| s / n).collect();
        let pts: Vec<LatLon> = p
            .clusters
            .iter()
            .map(|id| d.clusters.iter().find(|g| g.cluster_id == *id).unwrap().location)
            .collect();
        let w = SpatialWeights::knn(&pts, 5).unwrap().row_standardize();
        morans_i(&means, &w).unwrap().z
    }

    #[test]
    fn no_spatial_parameter_no_residual_correlation() {
        let sims = 100;
        let mut total = 0.0;
        for s in 0..sims {
            let mut c = small(1000 + s);
            c.rho = 0.0;
            total += residual_moran_z(&c);
        }
        // the mean of independent standard normal z over the runs
        let z = total / (sims as f64).sqrt();
        assert!(z.abs() < 3.0, "{z}");
    }

    #[test]
    fn strong_spatial_parameter_shows_up() {
        let mut c = small(77);
        c.rho = 0.8;
        c.outcomes[0].cluster_sigma = 0.8;
        assert!(residual_moran_z(&c) > 3.0);
    }
}
