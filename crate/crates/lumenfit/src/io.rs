//! CSV readers and writers for the input tables and the generator's truth file.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use lumenfit_core::data::RecordError;
use lumenfit_core::synth::{SyntheticData, TruthRecord};
use lumenfit_core::{ChildObservation, GeoCluster, LatLon, LightRecord, WealthQuintile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, record {record}: {source}")]
    Record {
        path: PathBuf,
        record: u64,
        source: RecordError,
    },
    #[error("{path}, record {record}: flag must be 0 or 1, found {value}")]
    Flag { path: PathBuf, record: u64, value: u8 },
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRow {
    cluster_id: u32,
    lat: f64,
    lon: f64,
    division: String,
    year: i32,
}

#[derive(Debug, Serialize, Deserialize)]
struct LightRow {
    cluster_id: u32,
    year: i32,
    radiance: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ChildRow {
    child_id: u64,
    cluster_id: u32,
    survey_year: i32,
    haz: Option<f64>,
    whz: Option<f64>,
    waz: Option<f64>,
    stunted: Option<u8>,
    wasted: Option<u8>,
    underweight: Option<u8>,
    mother_educ_years: Option<f64>,
    father_educ_years: Option<f64>,
    mother_age_first_birth: Option<f64>,
    birth_order: Option<f64>,
    mother_bmi: Option<f64>,
    child_age_months: Option<f64>,
    child_sex: Option<u8>,
    wealth_poorest: Option<u8>,
    wealth_poorer: Option<u8>,
    wealth_middle: Option<u8>,
    wealth_richer: Option<u8>,
    wealth_richest: Option<u8>,
    owns_tv: Option<u8>,
    has_electricity: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    outcome: String,
    term: String,
    value: f64,
}

fn bit(b: Option<bool>) -> Option<u8> {
    b.map(u8::from)
}

impl From<&ChildObservation> for ChildRow {
    fn from(c: &ChildObservation) -> Self {
        let w = c.wealth_quintile.map(|q| q.indicators().map(u8::from));
        let wq = |i: usize| w.map(|f| f[i]);
        ChildRow {
            child_id: c.child_id,
            cluster_id: c.cluster_id,
            survey_year: c.survey_year,
            haz: c.haz,
            whz: c.whz,
            waz: c.waz,
            stunted: bit(c.stunted),
            wasted: bit(c.wasted),
            underweight: bit(c.underweight),
            mother_educ_years: c.mother_educ_years,
            father_educ_years: c.father_educ_years,
            mother_age_first_birth: c.mother_age_first_birth,
            birth_order: c.birth_order,
            mother_bmi: c.mother_bmi,
            child_age_months: c.child_age_months,
            child_sex: bit(c.child_sex),
            wealth_poorest: wq(0),
            wealth_poorer: wq(1),
            wealth_middle: wq(2),
            wealth_richer: wq(3),
            wealth_richest: wq(4),
            owns_tv: bit(c.owns_tv),
            has_electricity: bit(c.has_electricity),
        }
    }
}

enum RowError {
    Record(RecordError),
    Flag(u8),
}

fn flag(v: Option<u8>) -> Result<Option<bool>, RowError> {
    match v {
        None => Ok(None),
        Some(0) => Ok(Some(false)),
        Some(1) => Ok(Some(true)),
        Some(other) => Err(RowError::Flag(other)),
    }
}

impl ChildRow {
    fn into_child(self) -> Result<ChildObservation, RowError> {
        let flags = [
            self.wealth_poorest,
            self.wealth_poorer,
            self.wealth_middle,
            self.wealth_richer,
            self.wealth_richest,
        ];
        // a partially filled block counts as missing
        let wealth = if flags.iter().any(Option::is_none) {
            None
        } else {
            let mut b = [false; 5];
            for (i, f) in flags.iter().enumerate() {
                b[i] = flag(*f)?.unwrap_or(false);
            }
            Some(WealthQuintile::from_indicators(b).map_err(RowError::Record)?)
        };
        let c = ChildObservation {
            child_id: self.child_id,
            cluster_id: self.cluster_id,
            survey_year: self.survey_year,
            haz: self.haz,
            whz: self.whz,
            waz: self.waz,
            stunted: flag(self.stunted)?,
            wasted: flag(self.wasted)?,
            underweight: flag(self.underweight)?,
            mother_educ_years: self.mother_educ_years,
            father_educ_years: self.father_educ_years,
            mother_age_first_birth: self.mother_age_first_birth,
            birth_order: self.birth_order,
            mother_bmi: self.mother_bmi,
            child_age_months: self.child_age_months,
            child_sex: flag(self.child_sex)?,
            wealth_quintile: wealth,
            owns_tv: flag(self.owns_tv)?,
            has_electricity: flag(self.has_electricity)?,
        };
        c.validate().map_err(RowError::Record)?;
        Ok(c)
    }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Open {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::Open {
        path: path.to_path_buf(),
        source,
    })
}

fn rows<T: for<'de> Deserialize<'de>, R: Read>(src: R, path: &Path) -> Result<Vec<(u64, T)>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let mut out = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        let row: T = r.map_err(|source| IoError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        out.push((i as u64 + 1, row));
    }
    Ok(out)
}

fn write_rows<T: Serialize, W: Write>(dst: W, items: impl IntoIterator<Item = T>, path: &Path) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(dst);
    for item in items {
        w.serialize(item).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

pub fn parse_clusters<R: Read>(src: R, path: &Path) -> Result<Vec<GeoCluster>, IoError> {
    rows::<ClusterRow, _>(src, path)?
        .into_iter()
        .map(|(record, r)| {
            let location = LatLon::new(r.lat, r.lon).map_err(|source| IoError::Record {
                path: path.to_path_buf(),
                record,
                source,
            })?;
            Ok(GeoCluster {
                cluster_id: r.cluster_id,
                location,
                division: r.division,
                survey_year: r.year,
            })
        })
        .collect()
}

pub fn parse_lights<R: Read>(src: R, path: &Path) -> Result<Vec<LightRecord>, IoError> {
    rows::<LightRow, _>(src, path)?
        .into_iter()
        .map(|(record, r)| {
            LightRecord::new(r.cluster_id, r.year, r.radiance).map_err(|source| IoError::Record {
                path: path.to_path_buf(),
                record,
                source,
            })
        })
        .collect()
}

pub fn parse_children<R: Read>(src: R, path: &Path) -> Result<Vec<ChildObservation>, IoError> {
    rows::<ChildRow, _>(src, path)?
        .into_iter()
        .map(|(record, r)| {
            r.into_child().map_err(|e| match e {
                RowError::Record(source) => IoError::Record {
                    path: path.to_path_buf(),
                    record,
                    source,
                },
                RowError::Flag(value) => IoError::Flag {
                    path: path.to_path_buf(),
                    record,
                    value,
                },
            })
        })
        .collect()
}

pub fn parse_truth<R: Read>(src: R, path: &Path) -> Result<Vec<TruthRecord>, IoError> {
    Ok(rows::<TruthRow, _>(src, path)?
        .into_iter()
        .map(|(_, r)| TruthRecord {
            outcome: r.outcome,
            term: r.term,
            value: r.value,
        })
        .collect())
}

pub fn read_clusters(path: &Path) -> Result<Vec<GeoCluster>, IoError> {
    parse_clusters(open(path)?, path)
}

pub fn read_lights(path: &Path) -> Result<Vec<LightRecord>, IoError> {
    parse_lights(open(path)?, path)
}

pub fn read_children(path: &Path) -> Result<Vec<ChildObservation>, IoError> {
    parse_children(open(path)?, path)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>, IoError> {
    parse_truth(open(path)?, path)
}

pub fn format_clusters<W: Write>(dst: W, clusters: &[GeoCluster], path: &Path) -> Result<(), IoError> {
    let it = clusters.iter().map(|c| ClusterRow {
        cluster_id: c.cluster_id,
        lat: c.location.lat(),
        lon: c.location.lon(),
        division: c.division.clone(),
        year: c.survey_year,
    });
    write_rows(dst, it, path)
}

pub fn format_lights<W: Write>(dst: W, lights: &[LightRecord], path: &Path) -> Result<(), IoError> {
    let it = lights.iter().map(|l| LightRow {
        cluster_id: l.cluster_id(),
        year: l.year(),
        radiance: l.radiance(),
    });
    write_rows(dst, it, path)
}

pub fn format_children<W: Write>(dst: W, children: &[ChildObservation], path: &Path) -> Result<(), IoError> {
    write_rows(dst, children.iter().map(ChildRow::from), path)
}

pub fn format_truth<W: Write>(dst: W, truth: &[TruthRecord], path: &Path) -> Result<(), IoError> {
    let it = truth.iter().map(|t| TruthRow {
        outcome: t.outcome.clone(),
        term: t.term.clone(),
        value: t.value,
    });
    write_rows(dst, it, path)
}

pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const LIGHTS_FILE: &str = "lights.csv";
pub const CHILDREN_FILE: &str = "children.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Writes the four generator files into `dir` and returns their paths.
pub fn write_synthetic(dir: &Path, data: &SyntheticData) -> Result<Vec<PathBuf>, IoError> {
    let paths: Vec<PathBuf> = [CLUSTERS_FILE, LIGHTS_FILE, CHILDREN_FILE, TRUTH_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    format_clusters(create(&paths[0])?, &data.clusters, &paths[0])?;
    format_lights(create(&paths[1])?, &data.lights, &paths[1])?;
    format_children(create(&paths[2])?, &data.children, &paths[2])?;
    format_truth(create(&paths[3])?, &data.truth, &paths[3])?;
    Ok(paths)
}

/// The three analysis inputs read from one directory.
pub struct Inputs {
    pub clusters: Vec<GeoCluster>,
    pub lights: Vec<LightRecord>,
    pub children: Vec<ChildObservation>,
}

pub fn read_inputs(clusters: &Path, lights: &Path, children: &Path) -> Result<Inputs, IoError> {
    Ok(Inputs {
        clusters: read_clusters(clusters)?,
        lights: read_lights(lights)?,
        children: read_children(children)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lumenfit_core::synth::{generate, ScenarioConfig};

    fn small() -> SyntheticData {
        let mut c = ScenarioConfig::calibrated(9);
        c.n_clusters = 20;
        c.total_households = Some(80);
        c.incomplete_share = 0.3;
        generate(&c).unwrap()
    }

    #[test]
    fn tables_round_trip() {
        let d = small();
        let p = Path::new("mem");
        let mut buf = Vec::new();
        format_children(&mut buf, &d.children, p).unwrap();
        assert_eq!(parse_children(buf.as_slice(), p).unwrap(), d.children);
        let mut buf = Vec::new();
        format_lights(&mut buf, &d.lights, p).unwrap();
        assert_eq!(parse_lights(buf.as_slice(), p).unwrap(), d.lights);
        let mut buf = Vec::new();
        format_clusters(&mut buf, &d.clusters, p).unwrap();
        assert_eq!(parse_clusters(buf.as_slice(), p).unwrap(), d.clusters);
        let mut buf = Vec::new();
        format_truth(&mut buf, &d.truth, p).unwrap();
        assert_eq!(parse_truth(buf.as_slice(), p).unwrap(), d.truth);
    }

    #[test]
    fn headers_are_declared() {
        let d = small();
        let mut buf = Vec::new();
        format_clusters(&mut buf, &d.clusters, Path::new("x")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "cluster_id,lat,lon,division,year");
    }

    #[test]
    fn bad_records_name_the_row() {
        let text = "cluster_id,year,radiance\n1,2011,0.5\n2,2011,70\n";
        match parse_lights(text.as_bytes(), Path::new("lights.csv")) {
            Err(IoError::Record { record, .. }) => assert_eq!(record, 2),
            other => panic!("{other:?}"),
        }
        let text = "cluster_id,lat,lon,division,year\n1,95,90,Dhaka,2011\n";
        assert!(matches!(
            parse_clusters(text.as_bytes(), Path::new("c.csv")),
            Err(IoError::Record { record: 1, .. })
        ));
    }

    #[test]
    fn flags_must_be_binary() {
        let header = "child_id,cluster_id,survey_year,haz,whz,waz,stunted,wasted,underweight,mother_educ_years,father_educ_years,mother_age_first_birth,birth_order,mother_bmi,child_age_months,child_sex,wealth_poorest,wealth_poorer,wealth_middle,wealth_richer,wealth_richest,owns_tv,has_electricity";
        let text = format!("{header}\n1,1,2011,,,,,,,,,,,,,2,,,,,,,\n");
        assert!(matches!(
            parse_children(text.as_bytes(), Path::new("k.csv")),
            Err(IoError::Flag { value: 2, .. })
        ));
        let text = format!("{header}\n1,1,2011,,,,,,,,,,,,,,1,1,0,0,0,,\n");
        assert!(matches!(
            parse_children(text.as_bytes(), Path::new("k.csv")),
            Err(IoError::Record { .. })
        ));
    }
}
