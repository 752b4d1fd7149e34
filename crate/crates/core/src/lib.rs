//! Empirical-Bayes variational inference for sparse linear regression under a
//! grouped horseshoe prior, with post-hoc variable selection, Gaussian
//! graphical network reconstruction and a Gibbs sampler used as a reference.

pub mod eb;
pub mod error;
pub mod gibbs_oracle;
pub mod model;
pub mod netsim;
pub mod rng;
pub mod selection;
pub mod specfn;
pub mod vb_engine;

pub use error::{Error, Result};
