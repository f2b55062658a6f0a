// SPDX-License-Identifier: Apache-2.0

//! Synthetic instances shared by the integration tests.

#![allow(dead_code)]

use bss_core::demand::uniform_grid_pmf;
use bss_core::network::{Edge, Node};
use bss_core::rng;
use bss_core::{
    ChoiceParams, NodeId, PathDemand, ReachLimits, RoadNetwork, Scenario, StationParams,
    StationTable,
};
use rand::seq::index::sample;
use rand::Rng;

pub struct InstanceSpec {
    pub nodes: usize,
    pub side_m: f64,
    pub candidates: usize,
    pub demands: usize,
    pub n_stations: usize,
    /// Per-demand rate range, per hour.
    pub rate_per_hour: (f64, f64),
    pub mu_per_hour: f64,
    pub ll: u32,
}

/// Random geometric road graph: every node links to its three nearest
/// neighbours and to its nearest earlier node, so the graph is connected.
/// Edge lengths are 1.2 times straight-line distance.
pub fn random_network(n: usize, side_m: f64, candidates: usize, seed: u64) -> RoadNetwork {
    let mut r = rng::stream(seed);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (r.random::<f64>() * side_m, r.random::<f64>() * side_m))
        .collect();
    let cand: Vec<usize> = sample(&mut r, n, candidates).into_vec();
    let nodes = (0..n)
        .map(|i| Node {
            id: i as NodeId,
            x_m: pts[i].0,
            y_m: pts[i].1,
            is_candidate: cand.contains(&i),
        })
        .collect();
    let d =
        |a: usize, b: usize| ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d(i, a).total_cmp(&d(i, b)));
        for &j in order.iter().take(3) {
            pairs.insert((i.min(j), i.max(j)));
        }
        if let Some(j) = (0..i).min_by(|&a, &b| d(i, a).total_cmp(&d(i, b))) {
            pairs.insert((j, i));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| Edge {
            u: a as NodeId,
            v: b as NodeId,
            length_m: 1.2 * d(a, b).max(1.0),
        })
        .collect();
    RoadNetwork::new(nodes, edges).unwrap()
}

pub fn default_choice() -> ChoiceParams {
    ChoiceParams::from_km_hours(0.04, 0.8, 0.02 / 60.0, 0.3)
}

pub fn default_limits() -> ReachLimits {
    ReachLimits {
        d_max_m: 5000.0,
        consumption_kwh_per_m: 0.002,
    }
}

/// Random instance; demand endpoints are distinct nodes at least a third
/// of the side apart.
pub fn random_instance(spec: &InstanceSpec, seed: u64) -> Scenario {
    let net = random_network(spec.nodes, spec.side_m, spec.candidates, seed);
    let mut r = rng::stream(rng::derive_seed(seed, &[1]));
    let mut demands = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    while demands.len() < spec.demands {
        let o = r.random_range(0..spec.nodes);
        let e = r.random_range(0..spec.nodes);
        let (a, b) = (&net.nodes()[o], &net.nodes()[e]);
        let far = ((a.x_m - b.x_m).powi(2) + (a.y_m - b.y_m).powi(2)).sqrt() >= spec.side_m / 3.0;
        if o == e || !far || !seen.insert((o, e)) {
            continue;
        }
        let rate = r.random_range(spec.rate_per_hour.0..=spec.rate_per_hour.1) / 3600.0;
        demands.push(
            PathDemand::new(
                o as NodeId,
                e as NodeId,
                rate,
                uniform_grid_pmf(30.0, 100.0, 5.0),
            )
            .unwrap(),
        );
    }
    Scenario::new(
        net,
        demands,
        default_choice(),
        StationTable::uniform(StationParams {
            mu: spec.mu_per_hour / 3600.0,
            ll: spec.ll,
            l_wait_s: 300.0,
        }),
        default_limits(),
        spec.n_stations,
    )
    .unwrap()
}
