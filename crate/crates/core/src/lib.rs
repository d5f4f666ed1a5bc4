//! Minimal training subsets whose removal flips a logistic-regression
//! prediction.
//!
//! A model is trained with [`model::train`]; [`influence`] estimates how each
//! training point's removal would move a test prediction; [`search`] turns
//! those estimates into candidate flip sets; [`lab`] checks candidates (and
//! the estimates themselves) against exact retraining.
//!
//! ```
//! use flipset::ingest::{make_synthetic, SyntheticConfig};
//! use flipset::model::{train, Hyperparams};
//! use flipset::search::greedy_flipset;
//!
//! let data = make_synthetic(&SyntheticConfig { n_train: 100, n_test: 5, dim: 3, ..Default::default() })?;
//! let model = train(&data.train, &Hyperparams::default())?;
//! let x_t = &data.test.instances()[0];
//! let result = greedy_flipset(&model, &data.train, x_t, model.hyper.tau)?;
//! if result.found() {
//!     println!("removing {} points should flip test point 0", result.k());
//! }
//! # Ok::<(), flipset::Error>(())
//! ```

pub mod artifact;
pub mod attribution;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod fsutil;
pub mod influence;
pub mod ingest;
pub mod lab;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod search;
pub mod stats;

pub use attribution::{AttributionMethod, AttributionScores};
pub use dataset::{DatasetSplit, DatasetSplits, FeatureKind, Instance, SplitKind};
pub use error::{Error, ErrorCategory, Result};
pub use features::{Features, SparseVec};
pub use influence::{InfluenceContext, InfluenceVector, ParamInfluence};
pub use model::{Hyperparams, TrainedModel};
pub use search::{Algorithm, FlipsetResult};
