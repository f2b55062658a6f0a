// SPDX-License-Identifier: Apache-2.0

//! A fully specified placement instance shared by both evaluators.

use thiserror::Error;

use crate::analytic::{StationParams, StationTable};
use crate::demand::{validate_demands, ChoiceParams, DemandError, PathDemand};
use crate::network::{AdmissibleSets, DistanceMatrix, NodeId, ReachLimits, RoadNetwork};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error("no path demands")]
    NoDemands,
    #[error("invalid choice parameters: {0}")]
    Choice(String),
    #[error("invalid station parameters for node {node}: {reason}")]
    Station { node: NodeId, reason: String },
    #[error("reach limits must satisfy d_max >= 0 and consumption > 0")]
    Reach,
    #[error("cannot place {wanted} stations on {available} candidate nodes")]
    TooManyStations { wanted: usize, available: usize },
}

/// Network, distances, demands, admissible sets and station parameters.
///
/// Immutable after construction and shared by reference across threads.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: RoadNetwork,
    pub distances: DistanceMatrix,
    pub demands: Vec<PathDemand>,
    pub sets: AdmissibleSets,
    pub choice: ChoiceParams,
    pub stations: StationTable,
    pub limits: ReachLimits,
    /// Number of stations to place.
    pub n_stations: usize,
    station_dense: Vec<StationParams>,
}

impl Scenario {
    pub fn new(
        network: RoadNetwork,
        demands: Vec<PathDemand>,
        choice: ChoiceParams,
        stations: StationTable,
        limits: ReachLimits,
        n_stations: usize,
    ) -> Result<Self, ScenarioError> {
        let distances = DistanceMatrix::build(&network);
        Self::with_distances(
            network, distances, demands, choice, stations, limits, n_stations,
        )
    }

    pub fn with_distances(
        network: RoadNetwork,
        distances: DistanceMatrix,
        demands: Vec<PathDemand>,
        choice: ChoiceParams,
        stations: StationTable,
        limits: ReachLimits,
        n_stations: usize,
    ) -> Result<Self, ScenarioError> {
        if demands.is_empty() {
            return Err(ScenarioError::NoDemands);
        }
        validate_demands(&network, &demands)?;
        choice.validate().map_err(ScenarioError::Choice)?;
        if !(limits.d_max_m >= 0.0 && limits.consumption_kwh_per_m > 0.0) {
            return Err(ScenarioError::Reach);
        }
        let available = network.candidates().len();
        if n_stations > available {
            return Err(ScenarioError::TooManyStations {
                wanted: n_stations,
                available,
            });
        }
        let station_dense: Vec<StationParams> =
            network.nodes().iter().map(|n| stations.get(n.id)).collect();
        for (n, p) in network.nodes().iter().zip(&station_dense) {
            if n.is_candidate {
                p.validate()
                    .map_err(|reason| ScenarioError::Station { node: n.id, reason })?;
            }
        }
        let sets = AdmissibleSets::compute(&network, &distances, &demands, limits);
        Ok(Scenario {
            network,
            distances,
            demands,
            sets,
            choice,
            stations,
            limits,
            n_stations,
            station_dense,
        })
    }

    /// Total demand arrival rate per second.
    pub fn total_rate(&self) -> f64 {
        self.demands.iter().map(|d| d.rate).sum()
    }

    /// Station parameters by dense node index.
    pub fn station_at(&self, index: usize) -> &StationParams {
        &self.station_dense[index]
    }

    /// A copy with every candidate's exogenous wait replaced.
    pub fn with_waits(&self, waits: impl Fn(NodeId) -> f64) -> Self {
        let mut sc = self.clone();
        for n in self.network.nodes() {
            let mut p = sc.stations.get(n.id);
            p.l_wait_s = waits(n.id);
            sc.stations.overrides.insert(n.id, p);
        }
        sc.station_dense = sc
            .network
            .nodes()
            .iter()
            .map(|n| sc.stations.get(n.id))
            .collect();
        sc
    }
}
