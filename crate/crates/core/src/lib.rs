//! Household-specific conditional logit estimation from clickstream logs.
//!
//! Raw visit logs are parsed into per-household panels ([`ingest`]),
//! turned into choice occasions with loyalty, repeated-search, log-pages
//! and missing-history covariates ([`features`]), restricted to each
//! household's own choice set ([`choice_set`]), estimated one household at
//! a time by Newton's method ([`logit`], [`batch`]) and summarized across
//! households ([`analytics`]). [`synth`] generates panels with known
//! coefficients for recovery checks.
//!
//! The numerical core is generic over [`Scalar`]; file formats and the CLI
//! work in `f64`.

pub mod analytics;
pub mod batch;
pub mod choice_set;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod ingest;
pub mod linalg;
pub mod logit;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type HouseholdFit = logit::HouseholdFit<f64>;
pub type HouseholdFit32 = logit::HouseholdFit<f32>;
pub type FitConfig = logit::FitConfig<f64>;
pub type FitConfig32 = logit::FitConfig<f32>;
pub type HouseholdDesign = choice_set::HouseholdDesign<f64>;
pub type HouseholdDesign32 = choice_set::HouseholdDesign<f32>;
pub type OccasionDesign = choice_set::OccasionDesign<f64>;
pub type OccasionDesign32 = choice_set::OccasionDesign<f32>;
pub type HouseholdOccasions = features::HouseholdOccasions<f64>;
pub type ChoiceOccasion = features::ChoiceOccasion<f64>;
pub type AlternativeCovariates = features::AlternativeCovariates<f64>;
pub type BatchResult = batch::BatchResult<f64>;
