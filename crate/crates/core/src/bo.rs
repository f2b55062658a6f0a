// SPDX-License-Identifier: Apache-2.0

//! Expected improvement, locally penalised batch selection, and the
//! BO-enhanced neighbourhood search that places a single station.
//!
//! Candidates form a finite set of planar points, so the acquisition is
//! maximised by scoring every unevaluated candidate. Objectives are
//! minimised throughout.

use std::io::Write;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::analytic::EvalError;
use crate::gp::{GpError, GpModel, Point};
use crate::network::NodeId;
use crate::opt::EvalBudget;
use crate::par::{self, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum BoError {
    #[error("standard deviation must be >= 0, got {0}")]
    NegativeSigma(f64),
    #[error("no initial observations")]
    NoObservations,
    #[error(transparent)]
    Gp(#[from] GpError),
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `E[(f_star - F)^+]` for `F ~ N(mu, sigma^2)`.
///
/// With `d = f_star - mu` this is `d * Phi(d / sigma) + sigma * phi(d / sigma)`,
/// and `max(d, 0)` when `sigma = 0`.
pub fn expected_improvement(mu: f64, sigma: f64, f_star: f64) -> Result<f64, BoError> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(BoError::NegativeSigma(sigma));
    }
    let d = f_star - mu;
    if sigma == 0.0 {
        return Ok(d.max(0.0));
    }
    let n = std_normal();
    let z = d / sigma;
    Ok((d * n.cdf(z) + sigma * n.pdf(z)).max(0.0))
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Positive transform applied to the acquisition before penalisation:
/// identity for acquisitions that are already nonnegative, soft-plus otherwise.
pub fn positive_transform(value: f64, nonnegative: bool) -> f64 {
    if nonnegative {
        value
    } else {
        softplus(value)
    }
}

/// Lipschitz constant used by the local penalisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lipschitz {
    /// Largest observed slope between pairs of observations.
    Estimated,
    Fixed(f64),
}

pub const LIPSCHITZ_FLOOR: f64 = 1e-6;

/// `max |y_a - y_b| / |x_a - x_b|` over distinct observed pairs, floored.
pub fn estimate_lipschitz(x: &[Point], y: &[f64]) -> f64 {
    let mut l: f64 = 0.0;
    for a in 0..x.len() {
        for b in (a + 1)..x.len() {
            let d = ((x[a][0] - x[b][0]).powi(2) + (x[a][1] - x[b][1]).powi(2)).sqrt();
            if d > 0.0 {
                l = l.max((y[a] - y[b]).abs() / d);
            }
        }
    }
    l.max(LIPSCHITZ_FLOOR)
}

/// Penaliser centred at a batch point, in `[0, 1]`, increasing in `dist`.
pub fn local_penalizer(dist: f64, lipschitz: f64, f_star: f64, mu_j: f64, sigma_j: f64) -> f64 {
    let s = sigma_j.max(1e-12);
    std_normal().cdf((lipschitz * dist - (f_star - mu_j).abs()) / s)
}

/// Everything needed to score a candidate within one batch.
#[derive(Debug, Clone)]
pub struct AcquisitionState<'a> {
    pub model: &'a GpModel,
    pub f_star: f64,
    /// Batch points chosen so far with their posterior mean and sd.
    pub batch: Vec<(Point, f64, f64)>,
    pub lipschitz: f64,
}

impl<'a> AcquisitionState<'a> {
    pub fn new(model: &'a GpModel, f_star: f64, lipschitz: f64) -> Self {
        AcquisitionState {
            model,
            f_star,
            batch: Vec::new(),
            lipschitz,
        }
    }

    pub fn ei(&self, x: &Point) -> f64 {
        let p = self.model.posterior(x);
        expected_improvement(p.mu, p.sd(), self.f_star).expect("posterior sd is nonnegative")
    }

    /// Transformed EI times the penalisers of every batch point so far.
    pub fn penalized(&self, x: &Point) -> f64 {
        let mut v = positive_transform(self.ei(x), true);
        for (c, mu, sd) in &self.batch {
            let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
            v *= local_penalizer(d, self.lipschitz, self.f_star, *mu, *sd);
        }
        v
    }

    pub fn push(&mut self, x: Point) {
        let p = self.model.posterior(&x);
        self.batch.push((x, p.mu, p.sd()));
    }
}

/// One point picked by [`select_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub candidate: usize,
    pub ei: f64,
    pub penalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub picks: Vec<Pick>,
    /// How many fewer than requested were available.
    pub shortfall: usize,
}

/// Greedily picks up to `m` distinct unevaluated candidates, each the
/// maximiser of the penalised acquisition given the earlier picks. Ties go
/// to the lowest candidate index.
pub fn select_batch(
    state: &mut AcquisitionState<'_>,
    candidates: &[Point],
    evaluated: &[bool],
    m: usize,
) -> Batch {
    let mut taken = evaluated.to_vec();
    let mut picks = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best: Option<Pick> = None;
        for (i, x) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let pv = state.penalized(x);
            if best.is_none_or(|b| pv > b.penalized) {
                best = Some(Pick {
                    candidate: i,
                    ei: state.ei(x),
                    penalized: pv,
                });
            }
        }
        let Some(p) = best else { break };
        taken[p.candidate] = true;
        state.push(candidates[p.candidate]);
        picks.push(p);
    }
    let shortfall = m - picks.len();
    Batch { picks, shortfall }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoensConfig {
    /// Batch size per iteration.
    pub m: usize,
    /// Number of BO iterations.
    pub n_sample: usize,
    pub lipschitz: Lipschitz,
    pub exec: Execution,
}

impl Default for BoensConfig {
    fn default() -> Self {
        BoensConfig {
            m: 2,
            n_sample: 3,
            lipschitz: Lipschitz::Estimated,
            exec: Execution::default(),
        }
    }
}

/// Observed candidates (indices into the candidate list) and objectives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub idx: Vec<usize>,
    pub y: Vec<f64>,
}

impl Observations {
    pub fn push(&mut self, i: usize, y: f64) {
        self.idx.push(i);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Position of the smallest objective; the earliest on ties.
    pub fn argmin(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, &y) in self.y.iter().enumerate() {
            if best.is_none_or(|b| y < self.y[b]) {
                best = Some(k);
            }
        }
        best
    }
}

/// One row of the BO trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BoTraceRow {
    pub iter: usize,
    pub batch_index: usize,
    pub node_id: NodeId,
    /// `None` when the evaluation failed.
    pub objective: Option<f64>,
    pub ei: f64,
    pub penalized_value: f64,
}

pub fn write_bo_trace<W: Write>(mut w: W, rows: &[BoTraceRow]) -> std::io::Result<()> {
    writeln!(w, "iter,batch_index,node_id,objective,ei,penalized_value")?;
    for r in rows {
        let obj = r.objective.map(|v| format!("{v}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iter, r.batch_index, r.node_id, obj, r.ei, r.penalized_value
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoensStats {
    pub iterations: usize,
    pub calls: usize,
    pub failures: usize,
    /// The budget ran out before all iterations were done.
    pub budget_exhausted: bool,
}

/// Runs `cfg.n_sample` rounds of fit, batch selection and concurrent
/// evaluation, appending successful evaluations to `obs`.
///
/// `candidates` pairs node ids with normalised coordinates; `eval` maps a
/// candidate index to the objective of the completed layout. Each round
/// reserves its batch from `budget`, truncating it to what remains. Failed
/// evaluations are logged and dropped. Rounds stop early once every
/// candidate has been observed.
pub fn boens<F>(
    candidates: &[(NodeId, Point)],
    obs: &mut Observations,
    cfg: &BoensConfig,
    budget: &EvalBudget,
    eval: F,
    trace: &mut Vec<BoTraceRow>,
    iter_counter: &mut usize,
) -> Result<BoensStats, BoError>
where
    F: Fn(usize) -> Result<f64, EvalError> + Sync + Send,
{
    if obs.is_empty() {
        return Err(BoError::NoObservations);
    }
    let points: Vec<Point> = candidates.iter().map(|c| c.1).collect();
    let mut stats = BoensStats::default();
    for _ in 0..cfg.n_sample {
        let mut evaluated = vec![false; candidates.len()];
        for &i in &obs.idx {
            evaluated[i] = true;
        }
        if evaluated.iter().all(|&e| e) {
            break;
        }
        let xs: Vec<Point> = obs.idx.iter().map(|&i| points[i]).collect();
        let model = GpModel::fit(&xs, &obs.y)?;
        let f_star = obs.y.iter().copied().fold(f64::INFINITY, f64::min);
        let lipschitz = match cfg.lipschitz {
            Lipschitz::Estimated => estimate_lipschitz(&xs, &obs.y),
            Lipschitz::Fixed(l) => l,
        };
        let mut state = AcquisitionState::new(&model, f_star, lipschitz);
        let mut batch = select_batch(&mut state, &points, &evaluated, cfg.m);
        let granted = budget.reserve(batch.picks.len());
        if granted < batch.picks.len() {
            batch.picks.truncate(granted);
            stats.budget_exhausted = true;
        }
        if batch.picks.is_empty() {
            break;
        }
        let results = par::map_with(cfg.exec, &batch.picks, |p| eval(p.candidate));
        stats.calls += results.len();
        for (b, (p, r)) in batch.picks.iter().zip(results).enumerate() {
            let objective = match r {
                Ok(v) if v.is_finite() => {
                    obs.push(p.candidate, v);
                    Some(v)
                }
                Ok(v) => {
                    log::warn!(
                        "candidate {} returned non-finite objective {v}",
                        candidates[p.candidate].0
                    );
                    stats.failures += 1;
                    None
                }
                Err(e) => {
                    log::warn!("candidate {} failed: {e}", candidates[p.candidate].0);
                    stats.failures += 1;
                    None
                }
            };
            trace.push(BoTraceRow {
                iter: *iter_counter,
                batch_index: b,
                node_id: candidates[p.candidate].0,
                objective,
                ei: p.ei,
                penalized_value: p.penalized,
            });
        }
        *iter_counter += 1;
        stats.iterations += 1;
        if stats.budget_exhausted {
            break;
        }
    }
    Ok(stats)
}
