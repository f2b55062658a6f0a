// SPDX-License-Identifier: Apache-2.0

//! Path demands and the multinomial-logit station choice.
//!
//! Units are SI throughout: meters, seconds, kWh. [`ChoiceParams::from_km_hours`]
//! converts coefficients quoted per kilometer and per hour.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::network::{Admissible, DistanceMatrix, NodeId, RoadNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum DemandError {
    #[error("demand ({0}, {0}) has identical origin and destination")]
    SameEndpoints(NodeId),
    #[error("demand ({origin}, {dest}) has rate {rate}; rates must be finite and > 0")]
    BadRate {
        origin: NodeId,
        dest: NodeId,
        rate: f64,
    },
    #[error("demand ({origin}, {dest}): battery pmf {reason}")]
    BadPmf {
        origin: NodeId,
        dest: NodeId,
        reason: String,
    },
    #[error("demand ({origin}, {dest}) references a node not in the network")]
    UnknownNode { origin: NodeId, dest: NodeId },
    #[error("duplicate demand ({origin}, {dest})")]
    Duplicate { origin: NodeId, dest: NodeId },
}

/// An origin-destination pair generating swap requests as a Poisson process.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDemand {
    pub origin: NodeId,
    pub dest: NodeId,
    /// Arrivals per second.
    pub rate: f64,
    /// `(level kWh, probability)`, ascending by level, levels distinct.
    pmf: Vec<(f64, f64)>,
}

impl PathDemand {
    pub fn new(
        origin: NodeId,
        dest: NodeId,
        rate_per_s: f64,
        mut pmf: Vec<(f64, f64)>,
    ) -> Result<Self, DemandError> {
        if origin == dest {
            return Err(DemandError::SameEndpoints(origin));
        }
        if !(rate_per_s.is_finite() && rate_per_s > 0.0) {
            return Err(DemandError::BadRate {
                origin,
                dest,
                rate: rate_per_s,
            });
        }
        let bad = |reason: &str| DemandError::BadPmf {
            origin,
            dest,
            reason: reason.to_string(),
        };
        if pmf.is_empty() {
            return Err(bad("is empty"));
        }
        if pmf
            .iter()
            .any(|&(l, p)| !(l.is_finite() && l >= 0.0 && p.is_finite() && p >= 0.0))
        {
            return Err(bad("has a negative or non-finite entry"));
        }
        pmf.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pmf.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(bad("repeats a battery level"));
        }
        let total: f64 = pmf.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad(&format!("sums to {total}, not 1")));
        }
        Ok(PathDemand {
            origin,
            dest,
            rate: rate_per_s,
            pmf,
        })
    }

    pub fn rate_per_hour(&self) -> f64 {
        self.rate * 3600.0
    }

    pub fn battery_pmf(&self) -> &[(f64, f64)] {
        &self.pmf
    }

    /// Uniform pmf over `levels`.
    pub fn uniform_levels(levels: &[f64]) -> Vec<(f64, f64)> {
        let p = 1.0 / levels.len() as f64;
        levels.iter().map(|&l| (l, p)).collect()
    }

    /// Draws a battery-level index by inversion of the cumulative pmf.
    pub fn sample_level_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &(_, p)) in self.pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // Rounding left u above the final cumulative sum; take the last level with mass.
        self.pmf
            .iter()
            .rposition(|&(_, p)| p > 0.0)
            .unwrap_or(self.pmf.len() - 1)
    }

    /// Draws a battery level in kWh.
    pub fn sample_battery<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.pmf[self.sample_level_index(rng)].0
    }
}

/// Discretizes a continuous uniform initial charge onto `{lo, lo+step, ..}`
/// strictly below `hi`, with equal mass.
pub fn uniform_grid_pmf(lo: f64, hi: f64, step: f64) -> Vec<(f64, f64)> {
    let mut levels = Vec::new();
    let mut l = lo;
    while l < hi - 1e-12 {
        levels.push(l);
        l += step;
    }
    PathDemand::uniform_levels(&levels)
}

/// Checks that every demand refers to network nodes and that OD pairs are unique.
pub fn validate_demands(net: &RoadNetwork, demands: &[PathDemand]) -> Result<(), DemandError> {
    let mut seen = std::collections::HashSet::new();
    for d in demands {
        if net.index_of(d.origin).is_none() || net.index_of(d.dest).is_none() {
            return Err(DemandError::UnknownNode {
                origin: d.origin,
                dest: d.dest,
            });
        }
        if !seen.insert((d.origin, d.dest)) {
            return Err(DemandError::Duplicate {
                origin: d.origin,
                dest: d.dest,
            });
        }
    }
    Ok(())
}

/// Sensitivities of the deterministic utility, per SI unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoiceParams {
    /// Utility lost per meter of detour.
    pub alpha_detour: f64,
    /// Utility per unit of probability guarantee.
    pub alpha_guarantee: f64,
    /// Utility lost per second of mean waiting.
    pub alpha_wait: f64,
    /// Probability guarantee in `[0, 1]`.
    pub epsilon: f64,
}

impl ChoiceParams {
    /// From coefficients quoted per kilometer of detour and per hour of waiting.
    pub fn from_km_hours(
        alpha1_per_km: f64,
        alpha2: f64,
        alpha3_per_hour: f64,
        epsilon: f64,
    ) -> Self {
        ChoiceParams {
            alpha_detour: alpha1_per_km / 1000.0,
            alpha_guarantee: alpha2,
            alpha_wait: alpha3_per_hour / 3600.0,
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = [self.alpha_detour, self.alpha_guarantee, self.alpha_wait]
            .iter()
            .all(|a| a.is_finite() && *a >= 0.0);
        if !ok {
            return Err("choice coefficients must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        Ok(())
    }

    /// Deterministic utility for a station with the given detour and mean wait.
    #[inline]
    pub fn utility_from(&self, detour_m: f64, wait_s: f64) -> f64 {
        -self.alpha_detour * detour_m + self.alpha_guarantee * self.epsilon
            - self.alpha_wait * wait_s
    }
}

/// Deterministic utility of swapping at `j` for demand `od`, given the mean wait `l_j`.
pub fn utility(
    net: &RoadNetwork,
    dm: &DistanceMatrix,
    od: &PathDemand,
    j: NodeId,
    wait_s: f64,
    params: &ChoiceParams,
) -> f64 {
    let o = net.index_of(od.origin).expect("origin in network");
    let e = net.index_of(od.dest).expect("destination in network");
    let s = net.index_of(j).expect("station in network");
    params.utility_from(dm.detour(o, s, e), wait_s)
}

/// Stable softmax of `utilities` written into `out`. Empty input leaves `out` empty.
pub fn softmax_into(utilities: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let Some(max) = utilities.iter().copied().reduce(f64::max) else {
        return;
    };
    out.extend(utilities.iter().map(|&u| (u - max).exp()));
    let total: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= total;
    }
}

/// Choice probabilities over built, battery-feasible stations.
///
/// `admissible` is `AN^b` for the demand and level, `built` tells whether a
/// node is in the layout and `utility` supplies `pi` for each built station.
/// Nodes absent from the result have probability 0. An empty result means
/// the demand is lost as Type II.
pub fn choice_probabilities<B, U>(
    admissible: &[Admissible],
    built: B,
    utility: U,
) -> BTreeMap<NodeId, f64>
where
    B: Fn(&Admissible) -> bool,
    U: Fn(&Admissible) -> f64,
{
    let open: Vec<&Admissible> = admissible.iter().filter(|a| built(a)).collect();
    let utils: Vec<f64> = open.iter().map(|a| utility(a)).collect();
    let mut probs = Vec::with_capacity(utils.len());
    softmax_into(&utils, &mut probs);
    open.iter().map(|a| a.node).zip(probs).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn adm(node: NodeId, detour: f64) -> Admissible {
        Admissible {
            node,
            index: node as usize,
            detour_m: detour,
            from_origin_m: 0.0,
            to_dest_m: 0.0,
        }
    }

    #[test]
    fn pmf_validation() {
        assert!(PathDemand::new(1, 1, 1.0, vec![(1.0, 1.0)]).is_err());
        assert!(PathDemand::new(1, 2, 0.0, vec![(1.0, 1.0)]).is_err());
        assert!(PathDemand::new(1, 2, 1.0, vec![(1.0, 0.6)]).is_err());
        assert!(PathDemand::new(1, 2, 1.0, vec![(1.0, 0.5), (1.0, 0.5)]).is_err());
        assert!(PathDemand::new(1, 2, 1.0, vec![(1.0, -0.5), (2.0, 1.5)]).is_err());
        let d = PathDemand::new(1, 2, 1.0, vec![(80.0, 0.5), (40.0, 0.5)]).unwrap();
        assert_eq!(d.battery_pmf(), &[(40.0, 0.5), (80.0, 0.5)]);
    }

    #[test]
    fn utility_with_reference_parameters() {
        let p = ChoiceParams::from_km_hours(0.04, 0.8, 0.02 / 60.0, 0.3);
        let u = p.utility_from(5000.0, 345.0);
        let want = -0.04 * 5.0 + 0.8 * 0.3 - (0.02 / 60.0) * (345.0 / 3600.0);
        assert!((u - want).abs() < 1e-12);
        assert!((u - 0.039968).abs() < 1e-6);
        let zero = ChoiceParams {
            alpha_detour: 0.0,
            alpha_guarantee: 0.0,
            alpha_wait: 0.0,
            epsilon: 0.3,
        };
        assert_eq!(zero.utility_from(1234.0, 99.0), 0.0);
        assert_eq!(p.utility_from(100.0, 30.0), p.utility_from(100.0, 30.0));
    }

    #[test]
    fn softmax_examples() {
        let one = choice_probabilities(&[adm(4, 10.0)], |_| true, |_| -3.0);
        assert_eq!(one[&4], 1.0);
        let two = choice_probabilities(
            &[adm(1, 0.0), adm(2, 0.0)],
            |_| true,
            |a| {
                if a.node == 1 {
                    0.0
                } else {
                    3f64.ln()
                }
            },
        );
        assert!((two[&1] - 0.25).abs() < 1e-12);
        assert!((two[&2] - 0.75).abs() < 1e-12);
        let none = choice_probabilities(&[adm(1, 0.0)], |_| false, |_| 0.0);
        assert!(none.is_empty());
    }

    #[test]
    fn degenerate_pmf_always_returns_its_level() {
        let d = PathDemand::new(1, 2, 1.0, vec![(50.0, 1.0)]).unwrap();
        let mut r = rng::stream(3);
        assert!((0..1000).all(|_| d.sample_battery(&mut r) == 50.0));
    }

    #[test]
    fn sampling_frequency_and_determinism() {
        let d = PathDemand::new(1, 2, 1.0, vec![(40.0, 0.5), (80.0, 0.5)]).unwrap();
        let mut r = rng::stream(11);
        let n = 100_000;
        let low = (0..n).filter(|_| d.sample_battery(&mut r) == 40.0).count();
        let f = low as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f), "frequency {f}");
        let mut a = rng::stream(5);
        let mut b = rng::stream(5);
        let sa: Vec<f64> = (0..100).map(|_| d.sample_battery(&mut a)).collect();
        let sb: Vec<f64> = (0..100).map(|_| d.sample_battery(&mut b)).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn uniform_grid_has_nineteen_points() {
        let pmf = uniform_grid_pmf(5.0, 100.0, 5.0);
        assert_eq!(pmf.len(), 19);
        assert_eq!(pmf[0].0, 5.0);
        assert_eq!(pmf[18].0, 95.0);
        assert!(PathDemand::new(1, 2, 1.0, pmf).is_ok());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one_and_shift_invariant(
            utils in prop::collection::vec(-50.0f64..50.0, 0..12),
            shift in -1e3f64..1e3,
            mask in prop::collection::vec(any::<bool>(), 12),
        ) {
            let a: Vec<Admissible> = (0..utils.len()).map(|i| adm(i as NodeId, 0.0)).collect();
            let built = |x: &Admissible| mask[x.node as usize];
            let p = choice_probabilities(&a, built, |x| utils[x.node as usize]);
            let q = choice_probabilities(&a, built, |x| utils[x.node as usize] + shift);
            let total: f64 = p.values().sum();
            if p.is_empty() {
                prop_assert!(!a.iter().any(built));
            } else {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
            for (k, v) in &p {
                prop_assert!((v - q[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn own_detour_increase_never_raises_probability(
            detours in prop::collection::vec(0.0f64..5000.0, 2..8),
            bump in 0.0f64..5000.0,
        ) {
            let params = ChoiceParams::from_km_hours(0.04, 0.8, 0.02 / 60.0, 0.3);
            let a: Vec<Admissible> = detours.iter().enumerate().map(|(i, &d)| adm(i as NodeId, d)).collect();
            let mut b = a.clone();
            b[0].detour_m += bump;
            let pa = choice_probabilities(&a, |_| true, |x| params.utility_from(x.detour_m, 0.0));
            let pb = choice_probabilities(&b, |_| true, |x| params.utility_from(x.detour_m, 0.0));
            prop_assert!(pb[&0] <= pa[&0] + 1e-15);
        }

        #[test]
        fn epsilon_never_changes_choice(eps1 in 0.0f64..1.0, eps2 in 0.0f64..1.0,
            detours in prop::collection::vec(0.0f64..5000.0, 1..6)) {
            let p1 = ChoiceParams::from_km_hours(0.04, 0.8, 0.02 / 60.0, eps1);
            let p2 = ChoiceParams { epsilon: eps2, ..p1 };
            let a: Vec<Admissible> = detours.iter().enumerate().map(|(i, &d)| adm(i as NodeId, d)).collect();
            let x = choice_probabilities(&a, |_| true, |s| p1.utility_from(s.detour_m, 60.0));
            let y = choice_probabilities(&a, |_| true, |s| p2.utility_from(s.detour_m, 60.0));
            for (k, v) in &x {
                prop_assert!((v - y[k]).abs() < 1e-12);
            }
        }
    }
}
