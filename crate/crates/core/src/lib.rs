//! Regional decomposition of the AC optimal power flow solved by consensus
//! ADMM, with a deterministic discrete-event model of how inter-region
//! communication delay shapes synchronous and asynchronous iterations.
//!
//! The crate is organized bottom-up:
//!
//! - [`case`]: MATPOWER case parsing, per-unit data, bus admittance matrix.
//! - [`partition`]: regions, tie lines and coupling matrices.
//! - [`nlp`], [`opf`]: interior-point solver and the local/centralized OPF.
//! - [`admm`]: consensus, multiplier and penalty updates; stopping rule.
//! - [`sim`]: virtual-time execution of the synchronous and asynchronous
//!   algorithms.
//! - [`experiment`]: sweeps and CSV reporting.

pub mod admm;
pub mod case;
pub mod exec;
pub mod experiment;
pub mod nlp;
pub mod opf;
pub mod partition;
pub mod sim;

pub use case::{parse_case, GridCase};
pub use opf::Network;
pub use partition::{build_partition, Partition, RegionSpec};
