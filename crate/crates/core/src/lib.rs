//! Estimators for studying nighttime-light urbanization against child
//! nutrition outcomes: cluster matching, kernel smoothing, tree ensembles,
//! polynomial and fixed-effects regression, spatial and serial-correlation
//! diagnostics, penalized-spline additive models and a synthetic survey
//! generator.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the command
//! line and the end-to-end pipeline live in the `lumenfit` crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod diagnostics;
pub mod feature_select;
pub mod gam;
pub mod geo;
pub mod linalg;
pub mod linear_models;
pub mod nonparam;
pub mod panel;
pub mod rng;
pub mod special;
pub mod summary;
pub mod synth;

pub use data::{
    ChildObservation, ClusterId, Covariate, GeoCluster, LatLon, LightRecord, Outcome, WealthQuintile,
};
pub use geo::{haversine_km, match_by_year, match_nearest, ClusterMatching, MatchOutcome};
pub use panel::{build_panel, AnalysisPanel, MergeOptions, MergeReport};
