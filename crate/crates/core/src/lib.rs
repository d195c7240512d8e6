//! Entity resolution with variational tuple representations.
//!
//! Attribute values are mapped to intermediate representations ([`ir`]),
//! encoded into diagonal Gaussians by a variational autoencoder ([`repr`]),
//! compared with the closed-form 2-Wasserstein distance by a Siamese matcher
//! ([`matcher`]), and labeled with the help of an active-learning loop
//! ([`al`]) seeded from LSH candidate pairs ([`neighbors`]).

pub mod al;
pub mod corpus;
pub mod error;
pub mod ir;
pub mod matcher;
pub mod metrics;
pub mod neighbors;
pub mod nnkit;
pub mod repr;
pub mod synth;

pub use error::{Error, Result};
