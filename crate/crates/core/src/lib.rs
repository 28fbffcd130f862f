//! Neural Collapse measurement on last-layer activations, plus the simplex
//! equiangular tight frame (ETF) viewed as a Gaussian-channel codebook.
//!
//! - [`io`]: NCAP activation packs, NCLF classifier snapshots, epoch manifests.
//! - [`moments`]: class means and total/between/within covariances.
//! - [`metrics`]: NC1 to NC4 and per-epoch trajectory reports.
//! - [`classify`]: MSE-optimal, self-dual, max-margin and nearest-center rules.
//! - [`etf`]: ETF construction, deviation measures, circumsphere rescaling.
//! - [`codec`]: error exponents and Monte Carlo error rates of linear decoders.
//! - [`synth`]: seeded synthetic trajectories that collapse toward an ETF.
//! - [`cli`]: the `ncollapse` command-line surface.

pub mod classify;
pub mod cli;
pub mod codec;
pub mod error;
pub mod etf;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod moments;
pub mod synth;
