//! Random-cluster model on finite pieces of the square lattice: exact
//! enumeration, Sweeny heat-bath dynamics, the Grimmett label coupling,
//! the FK-Ising fermionic observable and near-critical estimators.

pub mod connectivity;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod measure;
pub mod observable;
pub mod output;
pub mod rng;
pub mod stats;

pub use error::{RcmError, Result};
