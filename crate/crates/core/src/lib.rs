//! Discriminative autoencoder pre-training and two-stage cosine clustering.
//!
//! The encoder is first trained to push apart the cosine similarities of all
//! pairs in a batch while pulling together a few high-confidence anchor pairs
//! taken from a raw-space k-nearest-neighbor graph. Clustering then alternates
//! hard assignments, unit-norm centroids, and network updates.

pub mod autodiff;
pub mod clustering;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod knn;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod optim;
pub mod projection;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use linalg::Matrix;
