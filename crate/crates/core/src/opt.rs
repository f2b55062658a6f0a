// SPDX-License-Identifier: Apache-2.0

//! Layout optimisers: LNS with BO repair, simulated annealing, and
//! exhaustive enumeration. All three minimise a pluggable [`Evaluator`].

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::analytic::{self, EvalError, Layout, LayoutError, WaitMode};
use crate::bo::{self, BoError, BoTraceRow, BoensConfig, Lipschitz, Observations};
use crate::gp::{BoxScaler, Point};
use crate::network::{NodeId, RoadNetwork};
use crate::par::{self, Execution};
use crate::rng::{self, Stream};
use crate::scenario::Scenario;
use crate::sim::{self, SimConfig};

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("initial layout could not be evaluated: {0}")]
    Initial(EvalError),
    #[error("enumeration needs {count} layouts, above the cap of {cap}")]
    TooManyLayouts { count: u128, cap: u128 },
    #[error("every layout failed to evaluate")]
    AllFailed,
    #[error(transparent)]
    Bo(#[from] BoError),
}

/// Maps a layout to the objective being minimised.
///
/// Implementations must be pure: identical layouts give identical values.
pub trait Evaluator: Sync {
    fn evaluate(&self, layout: &Layout) -> Result<f64, EvalError>;
}

impl<F> Evaluator for F
where
    F: Fn(&Layout) -> Result<f64, EvalError> + Sync,
{
    fn evaluate(&self, layout: &Layout) -> Result<f64, EvalError> {
        self(layout)
    }
}

/// Closed-form demand loss.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticEvaluator<'a> {
    pub scenario: &'a Scenario,
    pub mode: WaitMode,
}

impl Evaluator for AnalyticEvaluator<'_> {
    fn evaluate(&self, layout: &Layout) -> Result<f64, EvalError> {
        Ok(analytic::evaluate(self.scenario, layout, self.mode)?.eta_lost)
    }
}

/// Simulated demand loss, seeded from the run seed and the layout so that
/// revisiting a layout reproduces its value.
#[derive(Debug, Clone)]
pub struct SimEvaluator<'a> {
    pub scenario: &'a Scenario,
    pub config: SimConfig,
    pub run_seed: u64,
    /// Independent runs averaged per layout.
    pub replications: usize,
}

impl<'a> SimEvaluator<'a> {
    pub fn new(scenario: &'a Scenario, config: SimConfig, run_seed: u64) -> Self {
        SimEvaluator {
            scenario,
            config,
            run_seed,
            replications: 1,
        }
    }

    pub fn seed_for(&self, layout: &Layout) -> u64 {
        let ids: Vec<u64> = layout.iter().map(u64::from).collect();
        rng::derive_seed(self.run_seed, &ids)
    }
}

impl Evaluator for SimEvaluator<'_> {
    fn evaluate(&self, layout: &Layout) -> Result<f64, EvalError> {
        let base = self.seed_for(layout);
        let seeds = sim::replication_seeds(base, self.replications.max(1));
        let mut sum = 0.0;
        for &seed in &seeds {
            let cfg = SimConfig {
                seed,
                ..self.config.clone()
            };
            let r = sim::simulate(self.scenario, layout, &cfg).map_err(|e| match e {
                sim::SimError::Eval(e) => e,
                other => EvalError::Failed(other.to_string()),
            })?;
            sum += r.eta_lost;
        }
        Ok(sum / seeds.len() as f64)
    }
}

/// Wraps an evaluator and counts calls.
#[derive(Debug)]
pub struct CountingEvaluator<E> {
    pub inner: E,
    calls: AtomicU64,
}

impl<E> CountingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CountingEvaluator {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: Evaluator> Evaluator for CountingEvaluator<E> {
    fn evaluate(&self, layout: &Layout) -> Result<f64, EvalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(layout)
    }
}

/// Shared evaluation allowance. Callers reserve before evaluating and then
/// make exactly the granted number of calls.
#[derive(Debug)]
pub struct EvalBudget {
    limit: Option<u64>,
    used: AtomicU64,
}

impl EvalBudget {
    pub fn new(limit: Option<u64>) -> Self {
        EvalBudget {
            limit,
            used: AtomicU64::new(0),
        }
    }

    /// Grants up to `n` evaluations; returns how many were granted.
    pub fn reserve(&self, n: usize) -> usize {
        let n = n as u64;
        let mut granted = 0;
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| {
                granted = match self.limit {
                    Some(l) => n.min(l.saturating_sub(u)),
                    None => n,
                };
                Some(u + granted)
            })
            .unwrap();
        granted as usize
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> Option<u64> {
        self.limit.map(|l| l.saturating_sub(self.used()))
    }

    pub fn exhausted(&self) -> bool {
        self.remaining() == Some(0)
    }
}

/// What the `elapsed_s` trace column measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    Wall,
    /// Evaluations used so far; makes traces reproducible byte for byte.
    Evals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub elapsed_s: f64,
    pub evals: u64,
    pub incumbent_obj: f64,
    pub best_obj: f64,
    /// Best layout so far.
    pub layout: Layout,
}

#[derive(Debug, Clone)]
pub struct OptTrace {
    pub rows: Vec<TraceRow>,
    clock: Clock,
    start: Instant,
}

impl OptTrace {
    pub fn new(clock: Clock) -> Self {
        OptTrace {
            rows: Vec::new(),
            clock,
            start: Instant::now(),
        }
    }

    pub fn elapsed(&self, evals: u64) -> f64 {
        match self.clock {
            Clock::Wall => self.start.elapsed().as_secs_f64(),
            Clock::Evals => evals as f64,
        }
    }

    pub fn push(&mut self, evals: u64, incumbent_obj: f64, best_obj: f64, layout: &Layout) {
        let elapsed_s = self.elapsed(evals);
        self.rows.push(TraceRow {
            elapsed_s,
            evals,
            incumbent_obj,
            best_obj,
            layout: layout.clone(),
        });
    }

    pub fn last_evals(&self) -> Option<u64> {
        self.rows.last().map(|r| r.evals)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "elapsed_s,evals,incumbent_obj,best_obj,layout")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.elapsed_s, r.evals, r.incumbent_obj, r.best_obj, r.layout
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub best: Layout,
    pub best_obj: f64,
    pub evals: u64,
    pub trace: OptTrace,
}

/// Candidate sites with coordinates scaled into the unit square.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub ids: Vec<NodeId>,
    pub points: Vec<Point>,
}

impl CandidateSet {
    pub fn from_network(net: &RoadNetwork) -> Self {
        let (x0, y0, x1, y1) = net.bounding_box();
        let scaler = BoxScaler::new([x0, y0], [x1, y1]);
        let ids = net.candidates();
        let points = ids
            .iter()
            .map(|&id| {
                let n = net.node(id).unwrap();
                scaler.apply([n.x_m, n.y_m])
            })
            .collect();
        CandidateSet { ids, points }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Uniform random `n`-subset of the candidates.
pub fn random_layout(cands: &[NodeId], n: usize, rng: &mut Stream) -> Layout {
    index::sample(rng, cands.len(), n.min(cands.len()))
        .into_iter()
        .map(|i| cands[i])
        .collect()
}

/// Removes `k` uniformly chosen stations. Returns the partial layout and the
/// removed nodes in removal order.
pub fn destroy(layout: &Layout, k: usize, rng: &mut Stream) -> (Layout, Vec<NodeId>) {
    let ids = layout.ids();
    let k = k.min(ids.len());
    let removed: Vec<NodeId> = index::sample(rng, ids.len(), k)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    let mut partial = layout.clone();
    for &r in &removed {
        partial.remove(r);
    }
    (partial, removed)
}

/// When the optimiser stops. Unset limits do not apply; at least one must be set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule {
    /// Evaluator calls, the initial evaluation included.
    pub max_evals: Option<u64>,
    pub max_iters: Option<usize>,
    pub time_budget_s: Option<f64>,
}

impl StopRule {
    pub fn evals(n: u64) -> Self {
        StopRule {
            max_evals: Some(n),
            ..StopRule::default()
        }
    }

    pub fn iters(n: usize) -> Self {
        StopRule {
            max_iters: Some(n),
            ..StopRule::default()
        }
    }

    fn validate(&self) -> Result<(), OptError> {
        if self.max_evals.is_none() && self.max_iters.is_none() && self.time_budget_s.is_none() {
            return Err(OptError::Config(
                "set at least one of max_evals, max_iters, time_budget_s".into(),
            ));
        }
        if self.max_evals == Some(0) {
            return Err(OptError::Config(
                "max_evals must be >= 1 (the initial layout is evaluated)".into(),
            ));
        }
        Ok(())
    }

    fn done(&self, iters: usize, start: Instant, budget: &EvalBudget) -> bool {
        self.max_iters.is_some_and(|m| iters >= m)
            || self
                .time_budget_s
                .is_some_and(|t| start.elapsed().as_secs_f64() >= t)
            || budget.exhausted()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LnsConfig {
    /// Stations removed per iteration.
    pub k_destroy: usize,
    /// When set, each iteration removes a uniform draw from
    /// `k_destroy_min..=k_destroy` stations instead of exactly `k_destroy`.
    pub k_destroy_min: Option<usize>,
    /// Random initial evaluations per inserted station.
    pub n_init: usize,
    pub m_batch: usize,
    pub n_sample: usize,
    pub lipschitz: Lipschitz,
    pub stop: StopRule,
    pub seed: u64,
    pub clock: Clock,
    pub exec: Execution,
}

impl Default for LnsConfig {
    fn default() -> Self {
        LnsConfig {
            k_destroy: 2,
            k_destroy_min: None,
            n_init: 3,
            m_batch: 2,
            n_sample: 3,
            lipschitz: Lipschitz::Estimated,
            stop: StopRule::iters(50),
            seed: 0,
            clock: Clock::Wall,
            exec: Execution::default(),
        }
    }
}

fn evaluate_initial<E: Evaluator + ?Sized>(
    initial: &Layout,
    eval: &E,
    budget: &EvalBudget,
) -> Result<f64, OptError> {
    let granted = budget.reserve(1);
    debug_assert_eq!(granted, 1);
    eval.evaluate(initial).map_err(OptError::Initial)
}

fn check_initial(initial: &Layout, cands: &CandidateSet) -> Result<(), OptError> {
    for id in initial.iter() {
        if cands.ids.binary_search(&id).is_err() {
            return Err(LayoutError::NotCandidate(id).into());
        }
    }
    if initial.is_empty() {
        return Err(OptError::Config("initial layout is empty".into()));
    }
    Ok(())
}

/// Inserts `missing` stations into `partial` one at a time, each placed by a
/// BO search over the free candidates. Returns `None` if the budget ran out
/// before the layout was complete.
#[allow(clippy::too_many_arguments)]
pub fn repair<E: Evaluator + ?Sized>(
    partial: &Layout,
    missing: usize,
    cands: &CandidateSet,
    eval: &E,
    cfg: &LnsConfig,
    budget: &EvalBudget,
    rng: &mut Stream,
    bo_trace: &mut Vec<BoTraceRow>,
    bo_iter: &mut usize,
) -> Result<Option<(Layout, f64)>, OptError> {
    let mut layout = partial.clone();
    let mut obj = f64::NAN;
    for _ in 0..missing {
        let free: Vec<usize> = (0..cands.len())
            .filter(|&i| !layout.contains(cands.ids[i]))
            .collect();
        if free.is_empty() {
            return Err(OptError::Config("no free candidate left to insert".into()));
        }
        let sub: Vec<(NodeId, Point)> = free
            .iter()
            .map(|&i| (cands.ids[i], cands.points[i]))
            .collect();
        let mut init: Vec<usize> =
            index::sample(rng, sub.len(), cfg.n_init.min(sub.len())).into_vec();
        let granted = budget.reserve(init.len());
        if granted == 0 {
            return Ok(None);
        }
        init.truncate(granted);
        let with = |i: usize| {
            let mut l = layout.clone();
            l.insert(sub[i].0);
            l
        };
        let results = par::map_with(cfg.exec, &init, |&i| eval.evaluate(&with(i)));
        let mut obs = Observations::default();
        for (&i, r) in init.iter().zip(results) {
            match r {
                Ok(v) if v.is_finite() => obs.push(i, v),
                Ok(v) => log::warn!("node {} returned non-finite objective {v}", sub[i].0),
                Err(e) => log::warn!("node {} failed: {e}", sub[i].0),
            }
        }
        if obs.is_empty() {
            if budget.exhausted() {
                return Ok(None);
            }
            log::warn!("all initial repair evaluations failed; skipping iteration");
            return Ok(None);
        }
        let bcfg = BoensConfig {
            m: cfg.m_batch,
            n_sample: cfg.n_sample,
            lipschitz: cfg.lipschitz,
            exec: cfg.exec,
        };
        bo::boens(
            &sub,
            &mut obs,
            &bcfg,
            budget,
            |i| eval.evaluate(&with(i)),
            bo_trace,
            bo_iter,
        )?;
        let j = obs.argmin().expect("observations are non-empty");
        layout.insert(sub[obs.idx[j]].0);
        obj = obs.y[j];
    }
    Ok(Some((layout, obj)))
}

/// Large neighbourhood search whose repair step places each removed station
/// with a batch BO search. Moves are accepted only when they improve.
pub fn lns_bo<E: Evaluator + ?Sized>(
    initial: &Layout,
    cands: &CandidateSet,
    eval: &E,
    cfg: &LnsConfig,
) -> Result<OptResult, OptError> {
    lns_bo_traced(initial, cands, eval, cfg, &mut Vec::new())
}

pub fn lns_bo_traced<E: Evaluator + ?Sized>(
    initial: &Layout,
    cands: &CandidateSet,
    eval: &E,
    cfg: &LnsConfig,
    bo_trace: &mut Vec<BoTraceRow>,
) -> Result<OptResult, OptError> {
    cfg.stop.validate()?;
    check_initial(initial, cands)?;
    if cfg.k_destroy < 1 || cfg.k_destroy > initial.len() {
        return Err(OptError::Config(format!(
            "k_destroy must be in 1..={}",
            initial.len()
        )));
    }
    if cfg
        .k_destroy_min
        .is_some_and(|k| k < 1 || k > cfg.k_destroy)
    {
        return Err(OptError::Config(
            "k_destroy_min must be in 1..=k_destroy".into(),
        ));
    }
    if cfg.n_init < 1 || cfg.m_batch < 1 {
        return Err(OptError::Config("n_init and m_batch must be >= 1".into()));
    }
    let start = Instant::now();
    let budget = EvalBudget::new(cfg.stop.max_evals);
    let mut trace = OptTrace::new(cfg.clock);
    let mut rng = rng::stream(cfg.seed);

    let init_obj = evaluate_initial(initial, eval, &budget)?;
    let (mut current, mut last_obj) = (initial.clone(), init_obj);
    let (mut best, mut best_obj) = (initial.clone(), init_obj);
    trace.push(budget.used(), last_obj, best_obj, &best);

    let mut iters = 0;
    let mut bo_iter = 0;
    while !cfg.stop.done(iters, start, &budget) {
        let k = match cfg.k_destroy_min {
            Some(lo) if lo < cfg.k_destroy => rng.random_range(lo..=cfg.k_destroy),
            _ => cfg.k_destroy,
        };
        let (partial, removed) = destroy(&current, k, &mut rng);
        let repaired = repair(
            &partial,
            removed.len(),
            cands,
            eval,
            cfg,
            &budget,
            &mut rng,
            bo_trace,
            &mut bo_iter,
        )?;
        iters += 1;
        let Some((layout, obj)) = repaired else {
            if budget.exhausted() {
                break;
            }
            continue;
        };
        if obj < last_obj {
            current = layout.clone();
            last_obj = obj;
        }
        if obj < best_obj {
            best = layout;
            best_obj = obj;
        }
        trace.push(budget.used(), last_obj, best_obj, &best);
    }
    if trace.last_evals() != Some(budget.used()) {
        trace.push(budget.used(), last_obj, best_obj, &best);
    }
    Ok(OptResult {
        best,
        best_obj,
        evals: budget.used(),
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaConfig {
    /// Initial temperature; `None` sets it from probe moves.
    pub t_init: Option<f64>,
    pub cooling_ratio: f64,
    pub moves_per_temp: usize,
    /// Probe moves used to set the initial temperature.
    pub probes: usize,
    pub stop: StopRule,
    pub seed: u64,
    pub clock: Clock,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            t_init: None,
            cooling_ratio: 0.95,
            moves_per_temp: 10,
            probes: 20,
            stop: StopRule::iters(1000),
            seed: 0,
            clock: Clock::Wall,
        }
    }
}

pub fn temperature(t_init: f64, ratio: f64, steps: u32) -> f64 {
    t_init * ratio.powi(steps as i32)
}

pub fn acceptance_probability(delta: f64, t: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-delta / t).exp()
    }
}

/// Moves one uniformly chosen station to a uniformly chosen free candidate.
pub fn sa_neighbour(layout: &Layout, cands: &[NodeId], rng: &mut Stream) -> Option<Layout> {
    let free: Vec<NodeId> = cands
        .iter()
        .copied()
        .filter(|&c| !layout.contains(c))
        .collect();
    if free.is_empty() || layout.is_empty() {
        return None;
    }
    let ids = layout.ids();
    let out = ids[rng.random_range(0..ids.len())];
    let into = free[rng.random_range(0..free.len())];
    let mut l = layout.clone();
    l.remove(out);
    l.insert(into);
    Some(l)
}

/// Simulated annealing with geometric cooling. Probe moves, when used, count
/// against the budget and can improve the best layout.
pub fn simulated_annealing<E: Evaluator + ?Sized>(
    initial: &Layout,
    cands: &CandidateSet,
    eval: &E,
    cfg: &SaConfig,
) -> Result<OptResult, OptError> {
    cfg.stop.validate()?;
    check_initial(initial, cands)?;
    if !(cfg.cooling_ratio > 0.0 && cfg.cooling_ratio < 1.0) {
        return Err(OptError::Config("cooling_ratio must be in (0, 1)".into()));
    }
    if cfg.moves_per_temp < 1 {
        return Err(OptError::Config("moves_per_temp must be >= 1".into()));
    }
    if cfg.t_init.is_some_and(|t| !(t > 0.0)) {
        return Err(OptError::Config("t_init must be > 0".into()));
    }
    let start = Instant::now();
    let budget = EvalBudget::new(cfg.stop.max_evals);
    let mut trace = OptTrace::new(cfg.clock);
    let mut rng = rng::stream(cfg.seed);

    let init_obj = evaluate_initial(initial, eval, &budget)?;
    let (mut current, mut cur_obj) = (initial.clone(), init_obj);
    let (mut best, mut best_obj) = (initial.clone(), init_obj);
    trace.push(budget.used(), cur_obj, best_obj, &best);

    let t_init = match cfg.t_init {
        Some(t) => t,
        None => {
            let mut deltas = Vec::with_capacity(cfg.probes);
            for _ in 0..cfg.probes {
                if cfg.stop.done(0, start, &budget) {
                    break;
                }
                let Some(nb) = sa_neighbour(initial, &cands.ids, &mut rng) else {
                    break;
                };
                if budget.reserve(1) == 0 {
                    break;
                }
                match eval.evaluate(&nb) {
                    Ok(v) if v.is_finite() => {
                        deltas.push((v - init_obj).abs());
                        if v < best_obj {
                            best = nb;
                            best_obj = v;
                        }
                    }
                    Ok(v) => log::warn!("probe returned non-finite objective {v}"),
                    Err(e) => log::warn!("probe failed: {e}"),
                }
                trace.push(budget.used(), cur_obj, best_obj, &best);
            }
            let mean = if deltas.is_empty() {
                0.0
            } else {
                deltas.iter().sum::<f64>() / deltas.len() as f64
            };
            if mean > 0.0 {
                mean
            } else {
                1e-9
            }
        }
    };
    log::debug!("simulated annealing t_init = {t_init}");

    let mut moves = 0usize;
    while !cfg.stop.done(moves, start, &budget) {
        let Some(nb) = sa_neighbour(&current, &cands.ids, &mut rng) else {
            break;
        };
        if budget.reserve(1) == 0 {
            break;
        }
        let t = temperature(
            t_init,
            cfg.cooling_ratio,
            (moves / cfg.moves_per_temp) as u32,
        );
        moves += 1;
        let u: f64 = rng.random();
        match eval.evaluate(&nb) {
            Ok(v) if v.is_finite() => {
                if u < acceptance_probability(v - cur_obj, t) {
                    current = nb;
                    cur_obj = v;
                }
                if cur_obj < best_obj {
                    best = current.clone();
                    best_obj = cur_obj;
                }
            }
            Ok(v) => log::warn!("move returned non-finite objective {v}"),
            Err(e) => log::warn!("move failed: {e}"),
        }
        trace.push(budget.used(), cur_obj, best_obj, &best);
    }
    if trace.last_evals() != Some(budget.used()) {
        trace.push(budget.used(), cur_obj, best_obj, &best);
    }
    Ok(OptResult {
        best,
        best_obj,
        evals: budget.used(),
        trace,
    })
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = match c.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// Successor of a sorted index combination in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in (i + 1)..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub const DEFAULT_ENUM_CAP: u128 = 100_000;

/// Evaluates every `n`-subset of the candidates. Ties keep the
/// lexicographically smallest layout; failed layouts are skipped.
pub fn enumerate_exact<E: Evaluator + ?Sized>(
    cands: &[NodeId],
    n: usize,
    eval: &E,
    cap: u128,
    exec: Execution,
    clock: Clock,
) -> Result<OptResult, OptError> {
    let mut ids = cands.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if n == 0 || n > ids.len() {
        return Err(OptError::Config(format!(
            "cannot choose {n} of {} candidates",
            ids.len()
        )));
    }
    let count = binomial(ids.len(), n);
    if count > cap {
        return Err(OptError::TooManyLayouts { count, cap });
    }
    const CHUNK: usize = 4096;
    let mut trace = OptTrace::new(clock);
    let mut comb: Vec<usize> = (0..n).collect();
    let mut more = true;
    let mut best: Option<(Layout, f64)> = None;
    let mut evals = 0u64;
    while more {
        let mut chunk: Vec<Layout> = Vec::with_capacity(CHUNK);
        while more && chunk.len() < CHUNK {
            chunk.push(comb.iter().map(|&i| ids[i]).collect());
            more = next_combination(&mut comb, ids.len());
        }
        let results = par::map_with(exec, &chunk, |l| eval.evaluate(l));
        for (l, r) in chunk.into_iter().zip(results) {
            evals += 1;
            match r {
                Ok(v) if v.is_finite() => {
                    if best.as_ref().is_none_or(|b| v < b.1) {
                        best = Some((l, v));
                    }
                    let b = best.as_ref().unwrap();
                    trace.push(evals, v, b.1, &b.0);
                }
                other => {
                    log::warn!("layout {l} skipped: {other:?}");
                    if let Some(b) = best.as_ref() {
                        trace.push(evals, f64::NAN, b.1, &b.0);
                    }
                }
            }
        }
    }
    let (best, best_obj) = best.ok_or(OptError::AllFailed)?;
    Ok(OptResult {
        best,
        best_obj,
        evals,
        trace,
    })
}
