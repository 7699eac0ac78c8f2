//! Assembly of the merged child/light analysis panel.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

use crate::data::{ChildObservation, ClusterId, Covariate, LightRecord, Outcome};
use crate::geo::{ClusterMatching, MatchOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("row {row}: `{column}` is missing")]
    MissingValue { row: usize, column: &'static str },
    #[error("panel has no rows")]
    Empty,
}

/// Why a child row did not make it into the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    UnlocatedCluster,
    NoLightWithinRadius,
    MissingLightRecord,
    NonpositiveRadiance,
    Incomplete,
}

impl DropReason {
    pub const ALL: [DropReason; 5] = [
        DropReason::UnlocatedCluster,
        DropReason::NoLightWithinRadius,
        DropReason::MissingLightRecord,
        DropReason::NonpositiveRadiance,
        DropReason::Incomplete,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DropReason::UnlocatedCluster => "cluster without coordinates",
            DropReason::NoLightWithinRadius => "no light cluster within radius",
            DropReason::MissingLightRecord => "missing light record",
            DropReason::NonpositiveRadiance => "nonpositive radiance",
            DropReason::Incomplete => "incomplete observation",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeReport {
    pub input_rows: usize,
    pub retained: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    pub radius_km: f64,
    pub clusters_matched: usize,
    pub clusters_total: usize,
}

impl MergeReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }

    pub fn dropped_for(&self, reason: DropReason) -> usize {
        self.dropped.get(&reason).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOptions {
    pub drop_incomplete: bool,
    /// Covariates whose absence makes a row incomplete.
    pub required_covariates: Vec<Covariate>,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            drop_incomplete: true,
            required_covariates: Covariate::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub child: ChildObservation,
    pub light_cluster_id: ClusterId,
    pub distance_km: f64,
    pub radiance: f64,
    pub log_radiance: f64,
    /// Position of `light_cluster_id` in [`AnalysisPanel::clusters`].
    pub cluster_index: usize,
    /// Position of the survey year in [`AnalysisPanel::years`].
    pub year_index: usize,
}

/// Merged observation table. Clusters are the matched light clusters, which
/// link survey rounds into an approximate cluster-level panel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisPanel {
    pub rows: Vec<PanelRow>,
    pub clusters: Vec<ClusterId>,
    pub years: Vec<i32>,
}

pub fn build_panel(
    children: &[ChildObservation],
    lights: &[LightRecord],
    matching: &ClusterMatching,
    options: &MergeOptions,
) -> (AnalysisPanel, MergeReport) {
    let radiance: BTreeMap<(ClusterId, i32), f64> = lights
        .iter()
        .map(|l| ((l.cluster_id(), l.year()), l.radiance()))
        .collect();
    let mut report = MergeReport {
        input_rows: children.len(),
        radius_km: matching.radius_km,
        clusters_matched: matching.matched_count(),
        clusters_total: matching.outcomes.len(),
        ..Default::default()
    };
    let mut kept: Vec<(ChildObservation, ClusterId, f64, f64)> = Vec::new();
    for child in children {
        let verdict = match matching.get(child.survey_year, child.cluster_id) {
            None | Some(MatchOutcome::Unlocated) => Err(DropReason::UnlocatedCluster),
            Some(MatchOutcome::Unmatched { .. }) => Err(DropReason::NoLightWithinRadius),
            Some(&MatchOutcome::Matched {
                light_cluster_id,
                distance_km,
            }) => match radiance.get(&(light_cluster_id, child.survey_year)) {
                None => Err(DropReason::MissingLightRecord),
                Some(&r) if !(r > 0.0) => Err(DropReason::NonpositiveRadiance),
                Some(&r) => {
                    if options.drop_incomplete && !child.is_complete(&options.required_covariates) {
                        Err(DropReason::Incomplete)
                    } else {
                        Ok((light_cluster_id, distance_km, r))
                    }
                }
            },
        };
        match verdict {
            Ok((id, d, r)) => kept.push((child.clone(), id, d, r)),
            Err(reason) => *report.dropped.entry(reason).or_insert(0) += 1,
        }
    }
    let mut clusters: Vec<ClusterId> = kept.iter().map(|k| k.1).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let mut years: Vec<i32> = kept.iter().map(|k| k.0.survey_year).collect();
    years.sort_unstable();
    years.dedup();
    let rows: Vec<PanelRow> = kept
        .into_iter()
        .map(|(child, id, d, r)| PanelRow {
            cluster_index: clusters.binary_search(&id).expect("collected above"),
            year_index: years.binary_search(&child.survey_year).expect("collected above"),
            child,
            light_cluster_id: id,
            distance_km: d,
            radiance: r,
            log_radiance: r.ln(),
        })
        .collect();
    report.retained = rows.len();
    (
        AnalysisPanel {
            rows,
            clusters,
            years,
        },
        report,
    )
}

impl AnalysisPanel {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn radiance(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.radiance).collect()
    }

    pub fn log_light(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.log_radiance).collect()
    }

    pub fn cluster_index(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.cluster_index).collect()
    }

    pub fn survey_years(&self) -> Vec<i32> {
        self.rows.iter().map(|r| r.child.survey_year).collect()
    }

    pub fn outcome(&self, outcome: Outcome) -> Result<Vec<f64>, PanelError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.child.outcome(outcome).ok_or(PanelError::MissingValue {
                    row: i,
                    column: outcome.name(),
                })
            })
            .collect()
    }

    pub fn covariate(&self, c: Covariate) -> Result<Vec<f64>, PanelError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.child.covariate(c).ok_or(PanelError::MissingValue {
                    row: i,
                    column: c.name(),
                })
            })
            .collect()
    }

    /// Sub-panel for a single survey year, with indices rebuilt.
    pub fn filter_year(&self, year: i32) -> AnalysisPanel {
        self.filter(|r| r.child.survey_year == year)
    }

    pub fn filter(&self, mut keep: impl FnMut(&PanelRow) -> bool) -> AnalysisPanel {
        let rows: Vec<PanelRow> = self.rows.iter().filter(|r| keep(r)).cloned().collect();
        let mut clusters: Vec<ClusterId> = rows.iter().map(|r| r.light_cluster_id).collect();
        clusters.sort_unstable();
        clusters.dedup();
        let mut years: Vec<i32> = rows.iter().map(|r| r.child.survey_year).collect();
        years.sort_unstable();
        years.dedup();
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.cluster_index = clusters.binary_search(&r.light_cluster_id).expect("present");
                r.year_index = years.binary_search(&r.child.survey_year).expect("present");
                r
            })
            .collect();
        AnalysisPanel {
            rows,
            clusters,
            years,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::WealthQuintile;
    use alloc::vec;

    fn complete_child(id: u64, cluster: ClusterId, year: i32) -> ChildObservation {
        ChildObservation {
            child_id: id,
            cluster_id: cluster,
            survey_year: year,
            haz: Some(-1.0),
            whz: Some(-0.5),
            waz: Some(-1.2),
            stunted: Some(false),
            wasted: Some(false),
            underweight: Some(false),
            mother_educ_years: Some(3.0),
            father_educ_years: Some(4.0),
            mother_age_first_birth: Some(18.0),
            birth_order: Some(2.0),
            mother_bmi: Some(2100.0),
            child_age_months: Some(2.0),
            child_sex: Some(true),
            wealth_quintile: Some(WealthQuintile::Middle),
            owns_tv: Some(false),
            has_electricity: Some(true),
        }
    }

    fn matching(pairs: &[(i32, ClusterId, MatchOutcome)]) -> ClusterMatching {
        ClusterMatching {
            radius_km: 1.5,
            outcomes: pairs.iter().map(|&(y, c, m)| ((y, c), m)).collect(),
        }
    }

    fn matched(id: ClusterId) -> MatchOutcome {
        MatchOutcome::Matched {
            light_cluster_id: id,
            distance_km: 0.3,
        }
    }

    #[test]
    fn table_one_log_bounds() {
        let lights = vec![
            LightRecord::new(100, 2011, 0.00023).unwrap(),
            LightRecord::new(101, 2011, 29.94).unwrap(),
        ];
        let children = vec![complete_child(1, 1, 2011), complete_child(2, 2, 2011)];
        let m = matching(&[(2011, 1, matched(100)), (2011, 2, matched(101))]);
        let (panel, report) = build_panel(&children, &lights, &m, &MergeOptions::default());
        assert_eq!(report.dropped_total(), 0);
        assert_eq!(panel.len(), 2);
        assert!((panel.rows[0].log_radiance - -8.377_431_249_041_079).abs() < 1e-12);
        assert!((panel.rows[1].log_radiance - 3.399_195_378_991_482).abs() < 1e-12);
    }

    #[test]
    fn drop_reasons_are_counted() {
        let lights = vec![
            LightRecord::new(100, 2011, 0.0).unwrap(),
            LightRecord::new(101, 2011, 2.0).unwrap(),
        ];
        let mut missing = complete_child(5, 4, 2011);
        missing.waz = None;
        let mut missing_cov = complete_child(6, 4, 2011);
        missing_cov.has_electricity = None;
        let children = vec![
            complete_child(1, 1, 2011), // zero radiance
            complete_child(2, 2, 2011), // unmatched
            complete_child(3, 3, 2011), // no coordinates
            complete_child(4, 4, 2011),
            missing,
            missing_cov,
            complete_child(7, 5, 2011), // light cluster has no reading
        ];
        let m = matching(&[
            (2011, 1, matched(100)),
            (2011, 2, MatchOutcome::Unmatched { nearest_km: 4.0 }),
            (2011, 3, MatchOutcome::Unlocated),
            (2011, 4, matched(101)),
            (2011, 5, matched(102)),
        ]);
        let (panel, report) = build_panel(&children, &lights, &m, &MergeOptions::default());
        assert_eq!(panel.len(), 1);
        assert_eq!(report.dropped_for(DropReason::NonpositiveRadiance), 1);
        assert_eq!(report.dropped_for(DropReason::NoLightWithinRadius), 1);
        assert_eq!(report.dropped_for(DropReason::UnlocatedCluster), 1);
        assert_eq!(report.dropped_for(DropReason::Incomplete), 2);
        assert_eq!(report.dropped_for(DropReason::MissingLightRecord), 1);
        assert_eq!(report.retained + report.dropped_total(), report.input_rows);

        let keep_all = MergeOptions {
            drop_incomplete: false,
            ..MergeOptions::default()
        };
        let (panel, _) = build_panel(&children, &lights, &m, &keep_all);
        assert_eq!(panel.len(), 3);
        assert!(matches!(panel.outcome(Outcome::Waz), Err(PanelError::MissingValue { row: 1, .. })));
    }

    #[test]
    fn indices_follow_sorted_clusters_and_years() {
        let lights = vec![
            LightRecord::new(200, 2011, 1.0).unwrap(),
            LightRecord::new(100, 2014, 1.5).unwrap(),
        ];
        let children = vec![complete_child(1, 1, 2011), complete_child(2, 2, 2014)];
        let m = matching(&[(2011, 1, matched(200)), (2014, 2, matched(100))]);
        let (panel, _) = build_panel(&children, &lights, &m, &MergeOptions::default());
        assert_eq!(panel.clusters, vec![100, 200]);
        assert_eq!(panel.years, vec![2011, 2014]);
        assert_eq!(panel.rows[0].cluster_index, 1);
        assert_eq!(panel.rows[1].year_index, 1);
        let only_2014 = panel.filter_year(2014);
        assert_eq!(only_2014.clusters, vec![100]);
        assert_eq!(only_2014.rows[0].cluster_index, 0);
        assert_eq!(only_2014.rows[0].year_index, 0);
    }
}
