//! Sequential and batch experimental design for Kriging surrogates.
//!
//! A campaign starts from a space-filling design, fits a Gaussian-process
//! model, scores a fixed candidate grid with one of seven criteria, picks
//! one point or a clustered batch, observes it, and repeats.

pub mod batch;
pub mod bessel;
pub mod cli;
pub mod criteria;
pub mod design;
pub mod error;
pub mod kernel;
pub mod kriging;
pub mod sequential;
pub mod testbed;

pub use batch::{select_batch, select_batch_with_fallback, ClusterParams, ClusterPartition};
pub use criteria::{argmax_over_candidates, CriterionSpec};
pub use design::{
    latin_hypercube, md_optimized_design, mixture_discrepancy, DesignMatrix, Discrepancy,
};
pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec};
pub use kriging::{fit, fit_with, FitOptions, KrigingModel};
pub use sequential::{
    run_campaign, CampaignConfig, CampaignResult, Objective, Observer, Termination,
};
pub use testbed::{metrics, run_comparison, ComparisonPlan, MetricReport, TestFunction};
