//! Counterfactual image-caption probing for intersectional retrieval bias.
//!
//! The crate covers the whole offline pipeline except model execution:
//!
//! - [`caption`]: inventories, caption enumeration, counterfactual sets,
//!   neutral prompts and the dataset census.
//! - [`planner`]: reproducible generation job manifests.
//! - [`embedding`]: the binary embedding format, sealed stores and a
//!   deterministic mock encoder.
//! - [`filter`]: caption-image and directional scoring, sample selection.
//! - [`retrieval`]: neutral query embeddings and exact top-K search.
//! - [`metrics`]: Skew@K, MaxSkew@K, marginal skew, proportions and
//!   cross-subject summaries.
//! - [`audit`]: gender prediction, confusion statistics, error census.
//! - [`pipeline`]: the CLI stages, their file layout and run manifests.

pub mod audit;
pub mod caption;
pub mod embedding;
mod error;
pub mod filter;
mod ids;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod plot;
pub mod retrieval;

pub use error::{Error, Result};
pub use ids::sha256_hex;
