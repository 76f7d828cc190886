//! Differentially private model-X knockoff variable selection.
//!
//! The crate covers the whole workflow: bounded datasets and seeded splits
//! ([`data`]), Gaussian model-X knockoffs ([`knockoffs`]), knockoff
//! statistics with sensitivity bounds ([`stats`]), Gaussian differential
//! privacy primitives ([`privacy`]), the selection procedures
//! ([`selection`]), a Monte Carlo harness ([`sim`]) and empirical
//! verification routines ([`verify`]).
//!
//! ```
//! use dpknock::selection::knockoff_threshold;
//!
//! let w = [3.0, 2.5, -1.0, 0.5, -0.2];
//! assert_eq!(knockoff_threshold(&w, 0.5, 1).unwrap(), 2.5);
//! ```

pub mod data;
pub mod error;
pub mod exec;
pub mod knockoffs;
mod linalg;
pub mod privacy;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod stats;
pub mod verify;

pub use data::{load_dataset, make_split, Dataset, SplitPlan};
pub use error::{Error, Result};
pub use exec::Execution;
pub use knockoffs::{generate_knockoffs, AugmentedDataset, GaussianKnockoffConfig};
pub use privacy::{NoiseLedger, PrivacyBudget, SeedSet};
pub use rng::NoiseStream;
pub use selection::{EValueResult, SelectionResult};
pub use stats::{compute_statistics, Family, FamilyConfig, KnockoffStatistics};
