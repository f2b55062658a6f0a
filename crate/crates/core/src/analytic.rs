// SPDX-License-Identifier: Apache-2.0

//! Closed-form demand-loss objective.
//!
//! Station arrival rates come from splitting each path demand over built,
//! admissible stations with the logit choice. Each station is then treated
//! as an M/M/1/K queue for blocking (Type I) loss; demands with no built
//! reachable station are lost outright (Type II).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::demand::softmax_into;
use crate::network::{NodeId, RoadNetwork};
use crate::scenario::Scenario;
use crate::sim::SimCounts;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("layout must contain exactly {expected} stations, got {actual}")]
    WrongSize { expected: usize, actual: usize },
    #[error("layout has more stations ({actual}) than the {max} to place")]
    TooLarge { max: usize, actual: usize },
    #[error("node {0} is not in the network")]
    UnknownNode(NodeId),
    #[error("node {0} is not a candidate station site")]
    NotCandidate(NodeId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("traffic intensity must be >= 0, got {0}")]
    NegativeRho(f64),
    #[error("total demand rate is zero")]
    ZeroDemand,
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("evaluation budget exhausted")]
    BudgetExhausted,
    #[error("evaluation failed: {0}")]
    Failed(String),
}

/// A set of station nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Layout(BTreeSet<NodeId>);

impl Layout {
    pub fn new(ids: impl IntoIterator<Item = NodeId>) -> Self {
        Layout(ids.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.0.contains(&id)
    }

    pub fn insert(&mut self, id: NodeId) -> bool {
        self.0.insert(id)
    }

    pub fn remove(&mut self, id: NodeId) -> bool {
        self.0.remove(&id)
    }

    /// Station ids in ascending order.
    pub fn ids(&self) -> Vec<NodeId> {
        self.0.iter().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().copied()
    }

    /// Checks candidacy of every station and, when `n` is given, the exact count.
    pub fn validate(&self, net: &RoadNetwork, n: Option<usize>) -> Result<(), LayoutError> {
        if let Some(n) = n {
            if self.len() != n {
                return Err(LayoutError::WrongSize {
                    expected: n,
                    actual: self.len(),
                });
            }
        }
        for id in self.iter() {
            match net.node(id) {
                None => return Err(LayoutError::UnknownNode(id)),
                Some(node) if !node.is_candidate => return Err(LayoutError::NotCandidate(id)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Dense membership mask over the network's node indices.
    pub fn mask(&self, net: &RoadNetwork) -> Vec<bool> {
        let mut m = vec![false; net.len()];
        for id in self.iter() {
            if let Some(i) = net.index_of(id) {
                m[i] = true;
            }
        }
        m
    }
}

impl FromIterator<NodeId> for Layout {
    fn from_iter<T: IntoIterator<Item = NodeId>>(iter: T) -> Self {
        Layout::new(iter)
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", ids.join(";"))
    }
}

/// Per-station queueing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationParams {
    /// Service rate per second.
    pub mu: f64,
    /// Maximum number of EVs in the system (waiting plus in service).
    pub ll: u32,
    /// Exogenous mean waiting time in seconds.
    pub l_wait_s: f64,
}

impl StationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(format!("service rate {} must be > 0", self.mu));
        }
        if self.ll < 1 {
            return Err("queue limit must be >= 1".into());
        }
        if !(self.l_wait_s.is_finite() && self.l_wait_s >= 0.0) {
            return Err(format!("mean wait {} must be >= 0", self.l_wait_s));
        }
        Ok(())
    }
}

/// Default station parameters with per-node overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct StationTable {
    pub default: StationParams,
    pub overrides: HashMap<NodeId, StationParams>,
}

impl StationTable {
    pub fn uniform(default: StationParams) -> Self {
        StationTable {
            default,
            overrides: HashMap::new(),
        }
    }

    pub fn get(&self, id: NodeId) -> StationParams {
        self.overrides.get(&id).copied().unwrap_or(self.default)
    }
}

/// How the mean wait entering the utility is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WaitMode {
    /// Use each station's configured `l_wait_s`.
    #[default]
    Exogenous,
    /// Iterate `l_j <- W_q(lambda_j)` of the M/M/1/K queue until the largest
    /// change is below `tol_s` or `max_iter` rounds have run.
    FixedPoint { tol_s: f64, max_iter: usize },
}

impl WaitMode {
    pub fn fixed_point() -> Self {
        WaitMode::FixedPoint {
            tol_s: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationStats {
    /// Arrival rate per second.
    pub lambda: f64,
    pub rho: f64,
    /// Type I loss rate per second.
    pub lost: f64,
    /// Mean wait used in (analytic) or observed by (simulation) the station.
    pub wait_s: f64,
}

/// Demand-loss fraction and its decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub eta_lost: f64,
    pub type1_rate: f64,
    pub type2_rate: f64,
    pub total_rate: f64,
    pub per_station: BTreeMap<NodeId, StationStats>,
    pub per_demand_type2: BTreeMap<(NodeId, NodeId), f64>,
    /// Event counts when produced by the simulator.
    pub sim: Option<SimCounts>,
}

/// Blocking probability of an M/M/1/K queue holding at most `ll` customers.
pub fn mm1k_loss_prob(rho: f64, ll: u32) -> Result<f64, EvalError> {
    if rho.is_nan() || rho < 0.0 {
        return Err(EvalError::NegativeRho(rho));
    }
    let k = ll as i32;
    if rho == 0.0 {
        return Ok(0.0);
    }
    if (rho - 1.0).abs() < 1e-9 {
        return Ok(1.0 / (ll as f64 + 1.0));
    }
    if rho < 1.0 {
        Ok(rho.powi(k) * (1.0 - rho) / (1.0 - rho.powi(k + 1)))
    } else {
        // Divide through by rho^(K+1) to keep powers bounded for large rho.
        let inv = 1.0 / rho;
        Ok((1.0 - inv) / (1.0 - inv.powi(k + 1)))
    }
}

/// Stationary distribution `p_0..p_K` of the M/M/1/K queue.
fn mm1k_distribution(rho: f64, ll: u32) -> Vec<f64> {
    let k = ll as usize;
    // Scale weights by rho^-K when rho > 1 so the largest term is 1.
    let w: Vec<f64> = if rho <= 1.0 {
        (0..=k).map(|n| rho.powi(n as i32)).collect()
    } else {
        (0..=k).map(|n| (1.0 / rho).powi((k - n) as i32)).collect()
    };
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Mean time spent waiting before service (seconds) in an M/M/1/K queue.
pub fn mm1k_mean_wait(lambda: f64, mu: f64, ll: u32) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let p = mm1k_distribution(lambda / mu, ll);
    let lq: f64 = p
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, q)| (n - 1) as f64 * q)
        .sum();
    let lambda_eff = lambda * (1.0 - p[ll as usize]);
    if lambda_eff <= 0.0 {
        0.0
    } else {
        lq / lambda_eff
    }
}

struct Split {
    lambda: Vec<f64>,
    type2: Vec<f64>,
}

fn split_demand(sc: &Scenario, built: &[bool], waits: &[f64]) -> Split {
    let mut lambda = vec![0.0; sc.network.len()];
    let mut type2 = vec![0.0; sc.demands.len()];
    let mut utils = Vec::new();
    let mut probs = Vec::new();
    let mut open = Vec::new();
    for (d, (dem, sets)) in sc.demands.iter().zip(sc.sets.iter()).enumerate() {
        for (k, &(_, p)) in dem.battery_pmf().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            open.clear();
            open.extend(sets.for_level(k).iter().filter(|a| built[a.index]));
            if open.is_empty() {
                type2[d] += dem.rate * p;
                continue;
            }
            utils.clear();
            utils.extend(
                open.iter()
                    .map(|a| sc.choice.utility_from(a.detour_m, waits[a.index])),
            );
            softmax_into(&utils, &mut probs);
            for (a, q) in open.iter().zip(&probs) {
                lambda[a.index] += dem.rate * p * q;
            }
        }
    }
    Split { lambda, type2 }
}

fn check_layout(sc: &Scenario, layout: &Layout) -> Result<(), EvalError> {
    layout.validate(&sc.network, None)?;
    if layout.len() > sc.n_stations {
        return Err(LayoutError::TooLarge {
            max: sc.n_stations,
            actual: layout.len(),
        }
        .into());
    }
    Ok(())
}

fn exogenous_waits(sc: &Scenario) -> Vec<f64> {
    (0..sc.network.len())
        .map(|i| sc.station_at(i).l_wait_s)
        .collect()
}

/// Arrival rate per second at each built station, using exogenous waits.
pub fn station_arrival_rates(
    sc: &Scenario,
    layout: &Layout,
) -> Result<BTreeMap<NodeId, f64>, EvalError> {
    check_layout(sc, layout)?;
    let built = layout.mask(&sc.network);
    let split = split_demand(sc, &built, &exogenous_waits(sc));
    Ok(layout
        .iter()
        .map(|id| (id, split.lambda[sc.network.index_of(id).unwrap()]))
        .collect())
}

/// Type II loss rate keyed by (origin, destination).
pub type DemandLoss = BTreeMap<(NodeId, NodeId), f64>;

/// Type II loss per demand and in total (per second).
pub fn type2_loss(sc: &Scenario, layout: &Layout) -> Result<(DemandLoss, f64), EvalError> {
    check_layout(sc, layout)?;
    let built = layout.mask(&sc.network);
    let mut per = BTreeMap::new();
    let mut total = 0.0;
    for (dem, sets) in sc.demands.iter().zip(sc.sets.iter()) {
        let mut lost = 0.0;
        for (k, &(_, p)) in dem.battery_pmf().iter().enumerate() {
            if !sets.for_level(k).iter().any(|a| built[a.index]) {
                lost += dem.rate * p;
            }
        }
        per.insert((dem.origin, dem.dest), lost);
        total += lost;
    }
    Ok((per, total))
}

/// Overall demand-loss fraction of `layout`.
pub fn evaluate(sc: &Scenario, layout: &Layout, mode: WaitMode) -> Result<EvalResult, EvalError> {
    check_layout(sc, layout)?;
    let total_rate = sc.total_rate();
    if total_rate <= 0.0 {
        return Err(EvalError::ZeroDemand);
    }
    let built = layout.mask(&sc.network);
    let mut waits = exogenous_waits(sc);
    let mut split = split_demand(sc, &built, &waits);
    if let WaitMode::FixedPoint { tol_s, max_iter } = mode {
        for _ in 0..max_iter {
            let mut change: f64 = 0.0;
            for (i, w) in waits.iter_mut().enumerate() {
                if built[i] {
                    let p = sc.station_at(i);
                    let next = mm1k_mean_wait(split.lambda[i], p.mu, p.ll);
                    change = change.max((next - *w).abs());
                    *w = next;
                }
            }
            split = split_demand(sc, &built, &waits);
            if change < tol_s {
                break;
            }
        }
    }

    let mut per_station = BTreeMap::new();
    let mut type1_rate = 0.0;
    for id in layout.iter() {
        let i = sc.network.index_of(id).unwrap();
        let p = sc.station_at(i);
        let lambda = split.lambda[i];
        let rho = lambda / p.mu;
        let lost = lambda * mm1k_loss_prob(rho, p.ll)?;
        type1_rate += lost;
        per_station.insert(
            id,
            StationStats {
                lambda,
                rho,
                lost,
                wait_s: waits[i],
            },
        );
    }
    let per_demand_type2: BTreeMap<(NodeId, NodeId), f64> = sc
        .demands
        .iter()
        .zip(&split.type2)
        .map(|(d, &l)| ((d.origin, d.dest), l))
        .collect();
    let type2_rate: f64 = split.type2.iter().sum();
    Ok(EvalResult {
        eta_lost: ((type1_rate + type2_rate) / total_rate).clamp(0.0, 1.0),
        type1_rate,
        type2_rate,
        total_rate,
        per_station,
        per_demand_type2,
        sim: None,
    })
}
