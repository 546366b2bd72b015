//! Label-free model drift detection through weak data slices.
//!
//! A weak slice is a feature-space rule (numeric intervals and categorical
//! value sets, combined by conjunction) on which a classifier errs more often
//! than on the data overall. Slices are found once on a labeled baseline
//! ([`slicing::find_weak_slices`]); at deployment time each slice is mapped
//! onto unlabeled data and the change in its relative size is tested
//! ([`drift::detect_drift`]). Holm-Bonferroni pooling turns the per-slice
//! tests into one verdict with family-wise error control.
//!
//! The [`distortion`] and [`harness`] modules inject controlled drift
//! (column permutations and error-rate rebalancing) and measure how often it
//! is detected.

pub mod data;
pub mod distortion;
pub mod drift;
pub mod error;
pub mod harness;
pub mod seed;
pub mod slicing;
pub mod stats;
pub mod synthetic;

pub use data::{
    load_dataset, load_unlabeled, resample_rows, save_dataset, stratified_split, Column, Dataset,
    FeatureKind, FeatureSchema, FeatureSpec, SplitPair,
};
pub use distortion::{
    multiplier_to_mcr, permute_distort, rebalance_mcr, target_misclassified, PermutationConfig,
    RebalanceConfig, Setting,
};
pub use drift::{detect_drift, DriftReport, Goal, SliceComparison, SliceDrift};
pub use error::{Error, Result};
pub use harness::{
    emit_report, run_goal1, run_goal1_on, run_goal2, run_goal2_on, DetectionGrid, Goal1ExperimentConfig, Goal2ExperimentConfig,
    GridCell, ReportFormat,
};
pub use slicing::{
    find_weak_slices, map_slice, slice_summary, Constraint, MappedSlice, SliceFinderConfig, SliceRule,
    SliceSet, SliceSummary, WeakSlice,
};
pub use stats::{
    cohens_h, holm_bonferroni, hypergeom_sf, two_proportion_test, Alternative, HolmResult,
    ProportionTestInput,
};
