//! PAC-Bayesian bounds for weighted majority votes.
//!
//! The crate turns a table of out-of-bag predictions into empirical loss
//! statistics, evaluates the first-order (FO), tandem (TND), μ-tandem
//! (CμTND) and offset-tandem (COTND) bounds, and minimizes them over the
//! posterior weights. Everything between ingestion and reporting is a pure
//! function of its inputs; the data-parallel kernels run on rayon when the
//! `parallel` feature is enabled (the default) and sequentially otherwise.

pub mod bounds;
pub mod dataio;
pub mod ensemble;
pub mod error;
pub mod grids;
pub mod lossstats;
pub mod optimize;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod specfun;

pub use error::{Error, Result};
