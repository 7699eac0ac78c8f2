//! Survey records: cluster locations, nighttime-light readings and child
//! observations, plus the variable vocabulary the estimators select from.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("{field} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{field} must be finite, found {value}")]
    NotFinite { field: &'static str, value: f64 },
    #[error("exactly one wealth-quintile indicator must be set, found {0}")]
    WealthQuintile(usize),
    #[error("unknown variable name `{0}`")]
    UnknownVariable(String),
}

/// A validated latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    lat: f64,
    lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self, RecordError> {
        check_range("latitude", lat, -90.0, 90.0)?;
        check_range("longitude", lon, -180.0, 180.0)?;
        Ok(Self { lat, lon })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }
}

fn check_range(field: &'static str, value: f64, min: f64, max: f64) -> Result<(), RecordError> {
    if value.is_nan() || value < min || value > max {
        return Err(RecordError::OutOfRange {
            field,
            value,
            min,
            max,
        });
    }
    Ok(())
}

pub type ClusterId = u32;

/// A survey enumeration area (or light-sampling cluster) with its centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoCluster {
    pub cluster_id: ClusterId,
    pub location: LatLon,
    pub division: String,
    pub survey_year: i32,
}

/// Nighttime-light digital number for one cluster and year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightRecord {
    cluster_id: ClusterId,
    year: i32,
    radiance: f64,
}

/// Upper end of the stable-lights digital-number scale.
pub const MAX_RADIANCE: f64 = 63.0;

impl LightRecord {
    pub fn new(cluster_id: ClusterId, year: i32, radiance: f64) -> Result<Self, RecordError> {
        check_range("radiance", radiance, 0.0, MAX_RADIANCE)?;
        Ok(Self {
            cluster_id,
            year,
            radiance,
        })
    }

    pub fn cluster_id(&self) -> ClusterId {
        self.cluster_id
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn radiance(&self) -> f64 {
        self.radiance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WealthQuintile {
    Poorest,
    Poorer,
    Middle,
    Richer,
    Richest,
}

impl WealthQuintile {
    pub const ALL: [WealthQuintile; 5] = [
        WealthQuintile::Poorest,
        WealthQuintile::Poorer,
        WealthQuintile::Middle,
        WealthQuintile::Richer,
        WealthQuintile::Richest,
    ];

    /// Decodes the five survey indicator columns, which must have exactly one
    /// flag set.
    pub fn from_indicators(flags: [bool; 5]) -> Result<Self, RecordError> {
        let set = flags.iter().filter(|&&f| f).count();
        if set != 1 {
            return Err(RecordError::WealthQuintile(set));
        }
        let idx = flags.iter().position(|&f| f).unwrap_or(0);
        Ok(Self::ALL[idx])
    }

    pub fn indicators(self) -> [bool; 5] {
        let mut out = [false; 5];
        out[self as usize] = true;
        out
    }
}

/// Child nutrition outcome, anthropometric z-score or derived binary flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Haz,
    Whz,
    Waz,
    Stunted,
    Wasted,
    Underweight,
}

impl Outcome {
    pub const ALL: [Outcome; 6] = [
        Outcome::Haz,
        Outcome::Whz,
        Outcome::Waz,
        Outcome::Stunted,
        Outcome::Wasted,
        Outcome::Underweight,
    ];
    pub const Z_SCORES: [Outcome; 3] = [Outcome::Haz, Outcome::Whz, Outcome::Waz];
    pub const BINARY: [Outcome; 3] = [Outcome::Stunted, Outcome::Wasted, Outcome::Underweight];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Haz => "haz",
            Outcome::Whz => "whz",
            Outcome::Waz => "waz",
            Outcome::Stunted => "stunted",
            Outcome::Wasted => "wasted",
            Outcome::Underweight => "underweight",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Outcome::Stunted | Outcome::Wasted | Outcome::Underweight)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Outcome {
    type Err = RecordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| RecordError::UnknownVariable(s.into()))
    }
}

/// The fourteen child, parental and household attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Covariate {
    MotherEducYears,
    FatherEducYears,
    MotherAgeFirstBirth,
    BirthOrder,
    MotherBmi,
    ChildAgeMonths,
    ChildSex,
    WealthPoorest,
    WealthPoorer,
    WealthMiddle,
    WealthRicher,
    WealthRichest,
    OwnsTv,
    HasElectricity,
}

impl Covariate {
    pub const ALL: [Covariate; 14] = [
        Covariate::MotherEducYears,
        Covariate::FatherEducYears,
        Covariate::MotherAgeFirstBirth,
        Covariate::BirthOrder,
        Covariate::MotherBmi,
        Covariate::ChildAgeMonths,
        Covariate::ChildSex,
        Covariate::WealthPoorest,
        Covariate::WealthPoorer,
        Covariate::WealthMiddle,
        Covariate::WealthRicher,
        Covariate::WealthRichest,
        Covariate::OwnsTv,
        Covariate::HasElectricity,
    ];

    /// Controls carried into the benchmark regressions.
    pub const BENCHMARK: [Covariate; 5] = [
        Covariate::MotherEducYears,
        Covariate::MotherAgeFirstBirth,
        Covariate::ChildAgeMonths,
        Covariate::WealthPoorest,
        Covariate::HasElectricity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::MotherEducYears => "mother_educ_years",
            Covariate::FatherEducYears => "father_educ_years",
            Covariate::MotherAgeFirstBirth => "mother_age_first_birth",
            Covariate::BirthOrder => "birth_order",
            Covariate::MotherBmi => "mother_bmi",
            Covariate::ChildAgeMonths => "child_age_months",
            Covariate::ChildSex => "child_sex",
            Covariate::WealthPoorest => "wealth_poorest",
            Covariate::WealthPoorer => "wealth_poorer",
            Covariate::WealthMiddle => "wealth_middle",
            Covariate::WealthRicher => "wealth_richer",
            Covariate::WealthRichest => "wealth_richest",
            Covariate::OwnsTv => "owns_tv",
            Covariate::HasElectricity => "has_electricity",
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = RecordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| RecordError::UnknownVariable(s.into()))
    }
}

/// One surveyed child. Any measurement may be missing in raw survey files;
/// present values are validated on construction through [`ChildObservation::validate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChildObservation {
    pub child_id: u64,
    pub cluster_id: ClusterId,
    pub survey_year: i32,
    pub haz: Option<f64>,
    pub whz: Option<f64>,
    pub waz: Option<f64>,
    pub stunted: Option<bool>,
    pub wasted: Option<bool>,
    pub underweight: Option<bool>,
    pub mother_educ_years: Option<f64>,
    pub father_educ_years: Option<f64>,
    pub mother_age_first_birth: Option<f64>,
    pub birth_order: Option<f64>,
    pub mother_bmi: Option<f64>,
    pub child_age_months: Option<f64>,
    pub child_sex: Option<bool>,
    pub wealth_quintile: Option<WealthQuintile>,
    pub owns_tv: Option<bool>,
    pub has_electricity: Option<bool>,
}

fn flag(b: Option<bool>) -> Option<f64> {
    b.map(|v| if v { 1.0 } else { 0.0 })
}

impl ChildObservation {
    pub fn validate(&self) -> Result<(), RecordError> {
        let finite = [
            ("haz", self.haz),
            ("whz", self.whz),
            ("waz", self.waz),
            ("mother_educ_years", self.mother_educ_years),
            ("father_educ_years", self.father_educ_years),
            ("mother_age_first_birth", self.mother_age_first_birth),
            ("birth_order", self.birth_order),
            ("mother_bmi", self.mother_bmi),
            ("child_age_months", self.child_age_months),
        ];
        for (field, v) in finite {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(RecordError::NotFinite { field, value: v });
                }
            }
        }
        Ok(())
    }

    pub fn outcome(&self, o: Outcome) -> Option<f64> {
        match o {
            Outcome::Haz => self.haz,
            Outcome::Whz => self.whz,
            Outcome::Waz => self.waz,
            Outcome::Stunted => flag(self.stunted),
            Outcome::Wasted => flag(self.wasted),
            Outcome::Underweight => flag(self.underweight),
        }
    }

    pub fn covariate(&self, c: Covariate) -> Option<f64> {
        let wealth = |q: WealthQuintile| self.wealth_quintile.map(|w| if w == q { 1.0 } else { 0.0 });
        match c {
            Covariate::MotherEducYears => self.mother_educ_years,
            Covariate::FatherEducYears => self.father_educ_years,
            Covariate::MotherAgeFirstBirth => self.mother_age_first_birth,
            Covariate::BirthOrder => self.birth_order,
            Covariate::MotherBmi => self.mother_bmi,
            Covariate::ChildAgeMonths => self.child_age_months,
            Covariate::ChildSex => flag(self.child_sex),
            Covariate::WealthPoorest => wealth(WealthQuintile::Poorest),
            Covariate::WealthPoorer => wealth(WealthQuintile::Poorer),
            Covariate::WealthMiddle => wealth(WealthQuintile::Middle),
            Covariate::WealthRicher => wealth(WealthQuintile::Richer),
            Covariate::WealthRichest => wealth(WealthQuintile::Richest),
            Covariate::OwnsTv => flag(self.owns_tv),
            Covariate::HasElectricity => flag(self.has_electricity),
        }
    }

    /// True when all three z-scores and every listed covariate are present.
    pub fn is_complete(&self, covariates: &[Covariate]) -> bool {
        Outcome::Z_SCORES.iter().all(|&o| self.outcome(o).is_some())
            && covariates.iter().all(|&c| self.covariate(c).is_some())
    }
}
