// SPDX-License-Identifier: Apache-2.0

//! Battery-swapping station placement on a road network.
//!
//! The crate is organised bottom-up:
//!
//! - [`network`]: road graph, all-pairs distances, admissible station sets.
//! - [`demand`]: Poisson path demands, battery levels and the logit station choice.
//! - [`analytic`]: closed-form demand-loss objective built on M/M/1/K blocking.
//! - [`sim`]: discrete-event simulator used as the ground-truth evaluator.
//! - [`gp`]: noise-free Gaussian-process regression with a squared-exponential kernel.
//! - [`bo`]: expected improvement, locally penalized batches and the BO-driven
//!   neighbourhood search used by the repair step.
//! - [`opt`]: LNS-BO, simulated annealing and exhaustive enumeration.
//! - [`ingest`]: GPS trace cleaning, demand extraction and network extraction.
//! - [`io`]: CSV / TOML file formats shared by the command-line tool.
//!
//! Data-parallel loops (replications, batch evaluation, enumeration, k-means
//! assignment) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bo;
pub mod demand;
pub mod gp;
pub mod ingest;
pub mod io;
pub mod network;
pub mod opt;
pub mod par;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use analytic::{EvalResult, Layout, StationParams, StationTable, WaitMode};
pub use demand::{ChoiceParams, PathDemand};
pub use network::{AdmissibleSets, DistanceMatrix, NodeId, ReachLimits, RoadNetwork};
pub use scenario::Scenario;
pub use sim::SimConfig;
