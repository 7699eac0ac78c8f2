//! Great-circle distances and nearest-cluster matching.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

use crate::data::{ChildObservation, ClusterId, GeoCluster, LatLon, LightRecord, RecordError};

/// IUGG mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Default matching radius between survey and light clusters.
pub const DEFAULT_RADIUS_KM: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("matching radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("no light clusters to match against")]
    EmptyLightSet,
    #[error("cluster {0} has conflicting locations and none for the requested year")]
    AmbiguousLocation(ClusterId),
}

/// Haversine distance between two validated points.
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dphi = p2 - p1;
    let dlambda = (b.lon() - a.lon()).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Great-circle distance in kilometers between two `(lat, lon)` pairs in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> Result<f64, GeoError> {
    Ok(haversine(LatLon::new(a.0, a.1)?, LatLon::new(b.0, b.1)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchOutcome {
    Matched {
        light_cluster_id: ClusterId,
        distance_km: f64,
    },
    /// Nearest light cluster lies at or beyond the radius.
    Unmatched { nearest_km: f64 },
    /// The survey cluster has no coordinates on file.
    Unlocated,
}

impl MatchOutcome {
    pub fn light_cluster(&self) -> Option<ClusterId> {
        match self {
            MatchOutcome::Matched {
                light_cluster_id, ..
            } => Some(*light_cluster_id),
            _ => None,
        }
    }
}

/// Maps each source cluster to the nearest light cluster strictly inside
/// `radius_km`. Equal distances go to the lower light cluster id.
pub fn match_nearest(
    sources: &[GeoCluster],
    lights: &[GeoCluster],
    radius_km: f64,
) -> Result<BTreeMap<ClusterId, MatchOutcome>, GeoError> {
    if !(radius_km > 0.0) {
        return Err(GeoError::InvalidRadius(radius_km));
    }
    if lights.is_empty() {
        return Err(GeoError::EmptyLightSet);
    }
    let mut sorted: Vec<&GeoCluster> = lights.iter().collect();
    sorted.sort_by_key(|c| c.cluster_id);
    let mut out = BTreeMap::new();
    for src in sources {
        let mut best: Option<(f64, ClusterId)> = None;
        for light in &sorted {
            let d = haversine(src.location, light.location);
            // ascending id order, so strict < keeps the lowest id on ties
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, light.cluster_id));
            }
        }
        let (d, id) = best.expect("light set is non-empty");
        let outcome = if d < radius_km {
            MatchOutcome::Matched {
                light_cluster_id: id,
                distance_km: d,
            }
        } else {
            MatchOutcome::Unmatched { nearest_km: d }
        };
        out.insert(src.cluster_id, outcome);
    }
    Ok(out)
}

/// Matching results keyed by `(survey_year, survey cluster id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterMatching {
    pub radius_km: f64,
    pub outcomes: BTreeMap<(i32, ClusterId), MatchOutcome>,
}

impl ClusterMatching {
    pub fn get(&self, year: i32, cluster: ClusterId) -> Option<&MatchOutcome> {
        self.outcomes.get(&(year, cluster))
    }

    pub fn matched_count(&self) -> usize {
        self.outcomes
            .values()
            .filter(|m| matches!(m, MatchOutcome::Matched { .. }))
            .count()
    }
}

/// Resolves cluster coordinates: the row for the requested year wins,
/// otherwise all rows for the id must agree.
pub struct ClusterIndex<'a> {
    by_id: BTreeMap<ClusterId, Vec<&'a GeoCluster>>,
}

impl<'a> ClusterIndex<'a> {
    pub fn new(clusters: &'a [GeoCluster]) -> Self {
        let mut by_id: BTreeMap<ClusterId, Vec<&GeoCluster>> = BTreeMap::new();
        for c in clusters {
            by_id.entry(c.cluster_id).or_default().push(c);
        }
        Self { by_id }
    }

    pub fn locate(&self, id: ClusterId, year: i32) -> Result<Option<&'a GeoCluster>, GeoError> {
        let Some(rows) = self.by_id.get(&id) else {
            return Ok(None);
        };
        if let Some(c) = rows.iter().find(|c| c.survey_year == year) {
            return Ok(Some(*c));
        }
        let first = rows[0];
        if rows.iter().all(|c| c.location == first.location) {
            Ok(Some(first))
        } else {
            Err(GeoError::AmbiguousLocation(id))
        }
    }
}

/// Runs [`match_nearest`] separately for every survey year found in the
/// children table. Candidate light clusters for a year are those with a
/// light reading in that year.
pub fn match_by_year(
    clusters: &[GeoCluster],
    lights: &[LightRecord],
    children: &[ChildObservation],
    radius_km: f64,
) -> Result<ClusterMatching, GeoError> {
    let index = ClusterIndex::new(clusters);
    let mut wanted: BTreeMap<i32, Vec<ClusterId>> = BTreeMap::new();
    for child in children {
        wanted.entry(child.survey_year).or_default().push(child.cluster_id);
    }
    let mut outcomes = BTreeMap::new();
    for (year, mut ids) in wanted {
        ids.sort_unstable();
        ids.dedup();
        let mut light_ids: Vec<ClusterId> = lights
            .iter()
            .filter(|l| l.year() == year)
            .map(|l| l.cluster_id())
            .collect();
        light_ids.sort_unstable();
        light_ids.dedup();
        let mut candidates = Vec::with_capacity(light_ids.len());
        for id in light_ids {
            if let Some(c) = index.locate(id, year)? {
                candidates.push(c.clone());
            }
        }
        let mut sources = Vec::with_capacity(ids.len());
        for id in ids {
            match index.locate(id, year)? {
                Some(c) => sources.push(c.clone()),
                None => {
                    outcomes.insert((year, id), MatchOutcome::Unlocated);
                }
            }
        }
        if sources.is_empty() {
            continue;
        }
        for (id, m) in match_nearest(&sources, &candidates, radius_km)? {
            outcomes.insert((year, id), m);
        }
    }
    Ok(ClusterMatching {
        radius_km,
        outcomes,
    })
}

/// Point reached by travelling `distance_km` from `start` along `bearing_deg`.
pub fn destination(start: LatLon, bearing_deg: f64, distance_km: f64) -> LatLon {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = bearing_deg.to_radians();
    let phi1 = start.lat().to_radians();
    let lambda1 = start.lon().to_radians();
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    let mut lon = lambda2.to_degrees();
    if lon > 180.0 {
        lon -= 360.0;
    } else if lon < -180.0 {
        lon += 360.0;
    }
    LatLon::new(phi2.to_degrees().clamp(-90.0, 90.0), lon).expect("clamped into range")
}
