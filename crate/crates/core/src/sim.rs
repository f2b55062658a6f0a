// SPDX-License-Identifier: Apache-2.0

//! Discrete-event simulation of path demands, logit station choice and
//! finite-capacity single-server stations.
//!
//! Each EV: draws a battery level, picks a built station that is detour- and
//! range-feasible (Type II loss if none), travels there, and is blocked
//! (Type I loss) if the station already holds `capacity` EVs. Otherwise it
//! queues FIFO, swaps, and drives on to its destination. The waiting time
//! entering the utility is each station's running mean of observed waits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{EvalError, EvalResult, Layout, StationStats};
use crate::demand::softmax_into;
use crate::network::{NodeId, ReachLimits};
use crate::par::{self, Execution};
use crate::rng::{self, Stream};
use crate::scenario::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("demand ({origin}, {dest}) has battery level {level} kWh above vehicle capacity {capacity} kWh")]
    BatteryAboveCapacity {
        origin: NodeId,
        dest: NodeId,
        level: f64,
        capacity: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceDist {
    Exponential { mean_s: f64 },
    Deterministic { time_s: f64 },
}

impl ServiceDist {
    pub fn mean_s(&self) -> f64 {
        match *self {
            ServiceDist::Exponential { mean_s } => mean_s,
            ServiceDist::Deterministic { time_s } => time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub warmup_s: f64,
    pub horizon_s: f64,
    pub speed_mps: f64,
    pub consumption_kwh_per_m: f64,
    pub d_max_m: f64,
    pub seed: u64,
    pub service: ServiceDist,
    /// Most EVs a station holds, the one in service included.
    pub capacity: u32,
    pub battery_capacity_kwh: f64,
    /// Wait reported by a station before any EV has started service there.
    pub initial_wait_s: f64,
}

impl Default for SimConfig {
    /// Ten simulated days after a 300 000 s warm-up, 10 m/s, 2 kWh/km,
    /// 5 km detour limit, exponential 300 s swaps, capacity 6, 100 kWh packs.
    fn default() -> Self {
        SimConfig {
            warmup_s: 300_000.0,
            horizon_s: 300_000.0 + 864_000.0,
            speed_mps: 10.0,
            consumption_kwh_per_m: 0.002,
            d_max_m: 5000.0,
            seed: 0,
            service: ServiceDist::Exponential { mean_s: 300.0 },
            capacity: 6,
            battery_capacity_kwh: 100.0,
            initial_wait_s: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.warmup_s >= 0.0 && self.horizon_s > self.warmup_s && self.horizon_s.is_finite()) {
            return bad("need horizon_s > warmup_s >= 0");
        }
        if !(self.speed_mps > 0.0 && self.consumption_kwh_per_m > 0.0) {
            return bad("speed and consumption must be > 0");
        }
        if !(self.d_max_m >= 0.0) {
            return bad("d_max must be >= 0");
        }
        if !(self.service.mean_s() > 0.0 && self.service.mean_s().is_finite()) {
            return bad("service time must be > 0");
        }
        if self.capacity < 1 {
            return bad("capacity must be >= 1");
        }
        if !(self.battery_capacity_kwh > 0.0) {
            return bad("battery capacity must be > 0");
        }
        if !(self.initial_wait_s >= 0.0) {
            return bad("initial wait must be >= 0");
        }
        Ok(())
    }

    pub fn reach(&self) -> ReachLimits {
        ReachLimits {
            d_max_m: self.d_max_m,
            consumption_kwh_per_m: self.consumption_kwh_per_m,
        }
    }

    pub fn window_s(&self) -> f64 {
        self.horizon_s - self.warmup_s
    }
}

/// `key = value` form of [`SimConfig`], distances in km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    pub warmup_s: f64,
    pub horizon_s: f64,
    pub speed_mps: f64,
    pub consumption_kwh_per_km: f64,
    pub d_max_km: f64,
    pub seed: u64,
    pub service_dist: String,
    pub service_mean_s: f64,
    pub capacity: u32,
    pub battery_capacity_kwh: f64,
}

impl SimConfigFile {
    pub fn into_config(self) -> Result<SimConfig, SimError> {
        let service = match self.service_dist.as_str() {
            "exponential" => ServiceDist::Exponential {
                mean_s: self.service_mean_s,
            },
            "deterministic" => ServiceDist::Deterministic {
                time_s: self.service_mean_s,
            },
            other => {
                return Err(SimError::Config(format!(
                    "service_dist must be `exponential` or `deterministic`, got `{other}`"
                )))
            }
        };
        let cfg = SimConfig {
            warmup_s: self.warmup_s,
            horizon_s: self.horizon_s,
            speed_mps: self.speed_mps,
            consumption_kwh_per_m: self.consumption_kwh_per_km / 1000.0,
            d_max_m: self.d_max_km * 1000.0,
            seed: self.seed,
            service,
            capacity: self.capacity,
            battery_capacity_kwh: self.battery_capacity_kwh,
            initial_wait_s: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        let (service_dist, service_mean_s) = match cfg.service {
            ServiceDist::Exponential { mean_s } => ("exponential", mean_s),
            ServiceDist::Deterministic { time_s } => ("deterministic", time_s),
        };
        SimConfigFile {
            warmup_s: cfg.warmup_s,
            horizon_s: cfg.horizon_s,
            speed_mps: cfg.speed_mps,
            consumption_kwh_per_km: cfg.consumption_kwh_per_m * 1000.0,
            d_max_km: cfg.d_max_m / 1000.0,
            seed: cfg.seed,
            service_dist: service_dist.to_string(),
            service_mean_s,
            capacity: cfg.capacity,
            battery_capacity_kwh: cfg.battery_capacity_kwh,
        }
    }
}

/// Outcome counts over demands generated inside `[warmup_s, horizon_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimCounts {
    pub generated: u64,
    pub served: u64,
    pub type1: u64,
    pub type2: u64,
    /// Travelling to, queued at, or in service at a station when the run ended.
    pub in_flight: u64,
    /// All events processed, warm-up included.
    pub events: u64,
}

impl SimCounts {
    pub fn conserved(&self) -> bool {
        self.generated == self.served + self.type1 + self.type2 + self.in_flight
    }
}

#[derive(Debug, Clone, Copy)]
struct Ev {
    demand: u32,
    station: u32,
    arrived_at: f64,
    counted: bool,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    DemandArrival { demand: u32 },
    StationArrival(Ev),
    ServiceComplete { station: u32 },
    DestinationArrival,
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed for a min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered pending events; ties leave in insertion order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Queue state and running wait statistics of one built station.
#[derive(Debug, Clone)]
pub struct StationState {
    pub node: NodeId,
    pub index: usize,
    pub in_system: u32,
    pub busy: bool,
    queue: VecDeque<Ev>,
    in_service: Option<Ev>,
    pub wait_count: u64,
    pub wait_sum_s: f64,
    initial_wait_s: f64,
    arrivals: u64,
    blocked: u64,
}

impl StationState {
    fn new(node: NodeId, index: usize, initial_wait_s: f64) -> Self {
        StationState {
            node,
            index,
            in_system: 0,
            busy: false,
            queue: VecDeque::new(),
            in_service: None,
            wait_count: 0,
            wait_sum_s: 0.0,
            initial_wait_s,
            arrivals: 0,
            blocked: 0,
        }
    }

    /// Empirical mean wait, or the initial estimate before any observation.
    pub fn mean_wait_s(&self) -> f64 {
        if self.wait_count > 0 {
            self.wait_sum_s / self.wait_count as f64
        } else {
            self.initial_wait_s
        }
    }

    fn counted_present(&self) -> u64 {
        self.queue.iter().filter(|e| e.counted).count() as u64
            + self.in_service.is_some_and(|e| e.counted) as u64
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    cfg: &'a SimConfig,
    rng: Stream,
    queue: EventQueue,
    stations: Vec<StationState>,
    /// Station slot by dense node index.
    slot: Vec<Option<u32>>,
    service: Option<Exp<f64>>,
    counts: SimCounts,
    counted_en_route: u64,
    type2_by_demand: Vec<u64>,
    utils: Vec<f64>,
    probs: Vec<f64>,
    open: Vec<(u32, f64)>,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, layout: &Layout, cfg: &'a SimConfig) -> Self {
        let mut slot = vec![None; sc.network.len()];
        let stations: Vec<StationState> = layout
            .iter()
            .enumerate()
            .map(|(k, id)| {
                let idx = sc.network.index_of(id).unwrap();
                slot[idx] = Some(k as u32);
                StationState::new(id, idx, cfg.initial_wait_s)
            })
            .collect();
        let service = match cfg.service {
            ServiceDist::Exponential { mean_s } => Some(Exp::new(1.0 / mean_s).unwrap()),
            ServiceDist::Deterministic { .. } => None,
        };
        Sim {
            sc,
            cfg,
            rng: rng::stream(cfg.seed),
            queue: EventQueue::default(),
            stations,
            slot,
            service,
            counts: SimCounts::default(),
            counted_en_route: 0,
            type2_by_demand: vec![0; sc.demands.len()],
            utils: Vec::new(),
            probs: Vec::new(),
            open: Vec::new(),
        }
    }

    fn interarrival(&mut self, rate: f64) -> f64 {
        Exp::new(rate).unwrap().sample(&mut self.rng)
    }

    fn service_time(&mut self) -> f64 {
        match (self.service, self.cfg.service) {
            (Some(exp), _) => exp.sample(&mut self.rng),
            (None, ServiceDist::Deterministic { time_s }) => time_s,
            (None, ServiceDist::Exponential { mean_s }) => mean_s,
        }
    }

    fn run(mut self) -> (SimCounts, Vec<StationState>, Vec<u64>) {
        for (d, dem) in self.sc.demands.iter().enumerate() {
            let t = self.interarrival(dem.rate);
            self.queue
                .push(t, EventKind::DemandArrival { demand: d as u32 });
        }
        while let Some(ev) = self.queue.pop() {
            if ev.time >= self.cfg.horizon_s {
                break;
            }
            self.counts.events += 1;
            let now = ev.time;
            match ev.kind {
                EventKind::DemandArrival { demand } => self.on_demand(now, demand),
                EventKind::StationArrival(e) => self.on_station_arrival(now, e),
                EventKind::ServiceComplete { station } => self.on_service_complete(now, station),
                EventKind::DestinationArrival => {}
            }
        }
        self.counts.in_flight = self.counted_en_route
            + self
                .stations
                .iter()
                .map(|s| s.counted_present())
                .sum::<u64>();
        (self.counts, self.stations, self.type2_by_demand)
    }

    fn on_demand(&mut self, now: f64, demand: u32) {
        let sc = self.sc;
        let dem = &sc.demands[demand as usize];
        let next = now + self.interarrival(dem.rate);
        self.queue.push(next, EventKind::DemandArrival { demand });

        let counted = now >= self.cfg.warmup_s;
        if counted {
            self.counts.generated += 1;
        }
        let level = dem.sample_level_index(&mut self.rng);
        let sets = sc.sets.demand(demand as usize);
        self.open.clear();
        for a in sets.for_level(level) {
            if let Some(k) = self.slot[a.index] {
                self.open.push((k, a.detour_m));
            }
        }
        if self.open.is_empty() {
            if counted {
                self.counts.type2 += 1;
                self.type2_by_demand[demand as usize] += 1;
            }
            return;
        }
        self.utils.clear();
        for &(k, detour) in &self.open {
            let wait = self.stations[k as usize].mean_wait_s();
            self.utils.push(sc.choice.utility_from(detour, wait));
        }
        softmax_into(&self.utils, &mut self.probs);
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut pick = self.open.len() - 1;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        let station = self.open[pick].0;
        let o = sc.network.index_of(dem.origin).unwrap();
        let travel = sc.distances.at(o, self.stations[station as usize].index) / self.cfg.speed_mps;
        if counted {
            self.counted_en_route += 1;
        }
        self.queue.push(
            now + travel,
            EventKind::StationArrival(Ev {
                demand,
                station,
                arrived_at: 0.0,
                counted,
            }),
        );
    }

    fn on_station_arrival(&mut self, now: f64, mut ev: Ev) {
        if ev.counted {
            self.counted_en_route -= 1;
        }
        let cap = self.cfg.capacity;
        let st = &mut self.stations[ev.station as usize];
        if ev.counted {
            st.arrivals += 1;
        }
        if st.in_system >= cap {
            if ev.counted {
                st.blocked += 1;
                self.counts.type1 += 1;
            }
            return;
        }
        st.in_system += 1;
        ev.arrived_at = now;
        if st.busy {
            st.queue.push_back(ev);
        } else {
            self.start_service(now, ev);
        }
    }

    fn start_service(&mut self, now: f64, ev: Ev) {
        let dt = self.service_time();
        let st = &mut self.stations[ev.station as usize];
        st.busy = true;
        st.wait_count += 1;
        st.wait_sum_s += now - ev.arrived_at;
        st.in_service = Some(ev);
        self.queue.push(
            now + dt,
            EventKind::ServiceComplete {
                station: ev.station,
            },
        );
    }

    fn on_service_complete(&mut self, now: f64, station: u32) {
        let st = &mut self.stations[station as usize];
        let done = st.in_service.take().expect("completion without service");
        st.in_system -= 1;
        st.busy = false;
        let next = st.queue.pop_front();
        let j = st.index;
        if done.counted {
            self.counts.served += 1;
        }
        let dest = self
            .sc
            .network
            .index_of(self.sc.demands[done.demand as usize].dest)
            .unwrap();
        let travel = self.sc.distances.at(j, dest) / self.cfg.speed_mps;
        self.queue.push(now + travel, EventKind::DestinationArrival);
        if let Some(ev) = next {
            self.start_service(now, ev);
        }
    }
}

/// Runs one replication and reports the realized loss fraction.
///
/// Only demands generated in `[warmup_s, horizon_s)` are counted; those still
/// in flight at the horizon count as not lost. Admissible sets come from the
/// scenario; `cfg` supplies timing, service and capacity.
pub fn simulate(sc: &Scenario, layout: &Layout, cfg: &SimConfig) -> Result<EvalResult, SimError> {
    cfg.validate()?;
    layout
        .validate(&sc.network, None)
        .map_err(EvalError::from)?;
    for d in &sc.demands {
        if let Some(&(level, _)) = d.battery_pmf().last() {
            if level > cfg.battery_capacity_kwh {
                return Err(SimError::BatteryAboveCapacity {
                    origin: d.origin,
                    dest: d.dest,
                    level,
                    capacity: cfg.battery_capacity_kwh,
                });
            }
        }
    }
    let (counts, stations, type2) = Sim::new(sc, layout, cfg).run();
    debug_assert!(counts.conserved(), "conservation violated: {counts:?}");
    let window = cfg.window_s();
    let mean_service = cfg.service.mean_s();
    let per_station = stations
        .iter()
        .map(|s| {
            let lambda = s.arrivals as f64 / window;
            let stats = StationStats {
                lambda,
                rho: lambda * mean_service,
                lost: s.blocked as f64 / window,
                wait_s: s.mean_wait_s(),
            };
            (s.node, stats)
        })
        .collect();
    let per_demand_type2: BTreeMap<(NodeId, NodeId), f64> = sc
        .demands
        .iter()
        .zip(&type2)
        .map(|(d, &n)| ((d.origin, d.dest), n as f64 / window))
        .collect();
    let eta_lost = if counts.generated == 0 {
        0.0
    } else {
        (counts.type1 + counts.type2) as f64 / counts.generated as f64
    };
    Ok(EvalResult {
        eta_lost,
        type1_rate: counts.type1 as f64 / window,
        type2_rate: counts.type2 as f64 / window,
        total_rate: counts.generated as f64 / window,
        per_station,
        per_demand_type2,
        sim: Some(counts),
    })
}

/// Mean and standard deviation of the loss fraction over replications.
#[derive(Debug, Clone)]
pub struct Replication {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single replication.
    pub std: f64,
    pub runs: Vec<EvalResult>,
}

/// One independent run per seed, in parallel; `runs[i]` used `seeds[i]`.
pub fn replicate(
    sc: &Scenario,
    layout: &Layout,
    cfg: &SimConfig,
    seeds: &[u64],
) -> Result<Replication, SimError> {
    replicate_with(Execution::default(), sc, layout, cfg, seeds)
}

pub fn replicate_with(
    exec: Execution,
    sc: &Scenario,
    layout: &Layout,
    cfg: &SimConfig,
    seeds: &[u64],
) -> Result<Replication, SimError> {
    if seeds.is_empty() {
        return Err(SimError::Config("need at least one replication".into()));
    }
    let runs = par::map_with(exec, seeds, |&seed| {
        let c = SimConfig {
            seed,
            ..cfg.clone()
        };
        simulate(sc, layout, &c)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let etas: Vec<f64> = runs.iter().map(|r| r.eta_lost).collect();
    let (mean, std) = mean_std(&etas);
    Ok(Replication { mean, std, runs })
}

/// Seeds `base`, `derive(base, 1)`, ... for `n` replications.
pub fn replication_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|i| {
            if i == 0 {
                base
            } else {
                rng::derive_seed(base, &[i])
            }
        })
        .collect()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{mm1k_loss_prob, StationParams, StationTable};
    use crate::demand::{ChoiceParams, PathDemand};
    use crate::network::{Edge, Node, RoadNetwork};

    /// Single station co-located with the demand origin.
    fn single_station(lambda: f64, mean_service: f64) -> Scenario {
        let net = RoadNetwork::new(
            vec![
                Node {
                    id: 1,
                    x_m: 0.0,
                    y_m: 0.0,
                    is_candidate: true,
                },
                Node {
                    id: 2,
                    x_m: 100.0,
                    y_m: 0.0,
                    is_candidate: false,
                },
            ],
            vec![Edge {
                u: 1,
                v: 2,
                length_m: 100.0,
            }],
        )
        .unwrap();
        Scenario::new(
            net,
            vec![PathDemand::new(1, 2, lambda, vec![(50.0, 1.0)]).unwrap()],
            ChoiceParams::from_km_hours(0.04, 0.8, 0.02 / 60.0, 0.3),
            StationTable::uniform(StationParams {
                mu: 1.0 / mean_service,
                ll: 6,
                l_wait_s: 0.0,
            }),
            ReachLimits {
                d_max_m: 5000.0,
                consumption_kwh_per_m: 0.002,
            },
            1,
        )
        .unwrap()
    }

    fn toy_cfg(cap: u32, mean_service: f64, horizon: f64, seed: u64) -> SimConfig {
        SimConfig {
            warmup_s: 1000.0,
            horizon_s: horizon,
            service: ServiceDist::Exponential {
                mean_s: mean_service,
            },
            capacity: cap,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn empty_layout_loses_everything() {
        let sc = single_station(0.01, 10.0);
        let r = simulate(&sc, &Layout::default(), &toy_cfg(2, 10.0, 50_000.0, 1)).unwrap();
        assert_eq!(r.eta_lost, 1.0);
        let c = r.sim.unwrap();
        assert_eq!(c.type2, c.generated);
        assert!(c.conserved());
    }

    #[test]
    fn light_traffic_loses_nothing() {
        let sc = single_station(1e-5, 10.0);
        let r = simulate(&sc, &Layout::new([1]), &toy_cfg(2, 10.0, 500_000.0, 1)).unwrap();
        assert_eq!(r.eta_lost, 0.0);
    }

    #[test]
    fn single_station_matches_blocking_formula() {
        let (mean_service, cap) = (10.0, 3u32);
        let lambda = 0.08;
        let sc = single_station(lambda, mean_service);
        let r = simulate(
            &sc,
            &Layout::new([1]),
            &toy_cfg(cap, mean_service, 1_000_000.0, 7),
        )
        .unwrap();
        let want = mm1k_loss_prob(lambda * mean_service, cap).unwrap();
        assert!(
            (r.eta_lost - want).abs() < 0.01,
            "{} vs {}",
            r.eta_lost,
            want
        );
        assert!(r.sim.unwrap().conserved());
    }

    #[test]
    fn replicate_std_edge_cases_and_analytic_mean() {
        let sc = single_station(0.1, 10.0);
        let cfg = toy_cfg(2, 10.0, 100_000.0, 3);
        let one = replicate(&sc, &Layout::new([1]), &cfg, &[5]).unwrap();
        assert_eq!(one.std, 0.0);
        let same = replicate(&sc, &Layout::new([1]), &cfg, &[9, 9, 9]).unwrap();
        assert_eq!(same.std, 0.0);
        let seeds = replication_seeds(42, 10);
        let reps = replicate(&sc, &Layout::new([1]), &cfg, &seeds).unwrap();
        let want = mm1k_loss_prob(1.0, 2).unwrap();
        let se = reps.std / (10f64).sqrt();
        assert!(
            (reps.mean - want).abs() <= 3.0 * se,
            "{} vs {} (se {se})",
            reps.mean,
            want
        );
    }

    #[test]
    fn identical_seed_is_byte_identical() {
        let sc = single_station(0.05, 10.0);
        let cfg = toy_cfg(2, 10.0, 100_000.0, 11);
        let a = simulate(&sc, &Layout::new([1]), &cfg).unwrap();
        let b = simulate(&sc, &Layout::new([1]), &cfg).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let seq = replicate_with(
            Execution::Sequential,
            &sc,
            &Layout::new([1]),
            &cfg,
            &[1, 2, 3],
        )
        .unwrap();
        let par = replicate_with(
            Execution::Parallel,
            &sc,
            &Layout::new([1]),
            &cfg,
            &[1, 2, 3],
        )
        .unwrap();
        assert_eq!(format!("{:?}", seq.runs), format!("{:?}", par.runs));
    }

    #[test]
    fn deterministic_service_runs() {
        let sc = single_station(0.05, 10.0);
        let cfg = SimConfig {
            service: ServiceDist::Deterministic { time_s: 10.0 },
            ..toy_cfg(3, 10.0, 100_000.0, 2)
        };
        let r = simulate(&sc, &Layout::new([1]), &cfg).unwrap();
        assert!(r.sim.unwrap().conserved());
        assert!(r.eta_lost < mm1k_loss_prob(0.5, 3).unwrap());
    }

    #[test]
    fn config_validation_and_file_roundtrip() {
        assert!(SimConfig {
            horizon_s: 10.0,
            warmup_s: 10.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            capacity: 0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        let cfg = SimConfig {
            seed: 17,
            ..SimConfig::default()
        };
        let back = SimConfigFile::from_config(&cfg).into_config().unwrap();
        assert_eq!(back, cfg);
        let mut f = SimConfigFile::from_config(&cfg);
        f.service_dist = "gamma".into();
        assert!(f.into_config().is_err());
    }

    #[test]
    fn battery_above_capacity_is_rejected() {
        let sc = single_station(0.05, 10.0);
        let cfg = SimConfig {
            battery_capacity_kwh: 40.0,
            ..toy_cfg(2, 10.0, 10_000.0, 1)
        };
        assert!(matches!(
            simulate(&sc, &Layout::new([1]), &cfg),
            Err(SimError::BatteryAboveCapacity { .. })
        ));
    }

    #[test]
    fn mean_std_definition() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
