// SPDX-License-Identifier: Apache-2.0

//! Noise-free Gaussian-process regression on planar points.
//!
//! Zero prior mean, squared-exponential kernel with a single length scale.
//! Targets are standardised before fitting and predictions are reported in
//! the original units. Hyperparameters maximise the log marginal likelihood
//! over a log-spaced grid, refined by coordinate descent.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("need at least one observation")]
    Empty,
    #[error("{x} inputs but {y} targets")]
    Mismatch { x: usize, y: usize },
    #[error("non-finite observation at index {0}")]
    NonFinite(usize),
    #[error("invalid hyperparameters: sigma_f2 = {sigma_f2}, length_scale = {length_scale}")]
    BadHyper { sigma_f2: f64, length_scale: f64 },
    #[error(
        "covariance not positive definite after jitter {jitter:e} \
         (n = {n}, min pairwise distance {min_dist:e}, length scale {length_scale})"
    )]
    NotPositiveDefinite {
        n: usize,
        jitter: f64,
        min_dist: f64,
        length_scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub sigma_f2: f64,
    pub length_scale: f64,
}

pub const SIGMA_F2_RANGE: (f64, f64) = (1e-2, 1e2);
pub const LENGTH_RANGE: (f64, f64) = (5e-2, 2.0);
const GRID: usize = 7;
const MAX_DESCENT_STEPS: usize = 50;
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Hyperparameters used when there are too few points to fit.
pub const DEFAULT_HYPER: Hyper = Hyper {
    sigma_f2: 1.0,
    length_scale: 0.3,
};

#[inline]
fn sq_dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn kernel(a: &Point, b: &Point, sigma_f2: f64, length_scale: f64) -> f64 {
    sigma_f2 * (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp()
}

/// Affine map of a bounding box onto the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxScaler {
    pub min: Point,
    pub span: Point,
}

impl BoxScaler {
    pub fn new(min: Point, max: Point) -> Self {
        let span = |i: usize| {
            let s = max[i] - min[i];
            if s > 0.0 {
                s
            } else {
                1.0
            }
        };
        BoxScaler {
            min,
            span: [span(0), span(1)],
        }
    }

    pub fn identity() -> Self {
        BoxScaler {
            min: [0.0, 0.0],
            span: [1.0, 1.0],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        [
            (p[0] - self.min[0]) / self.span[0],
            (p[1] - self.min[1]) / self.span[1],
        ]
    }
}

/// Posterior mean and variance at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mu: f64,
    pub var: f64,
}

impl Posterior {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Point>,
    y_std: Vec<f64>,
    hyper: Hyper,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    log_lik: f64,
}

/// Shift and scale that map `y` to zero mean and unit sample variance.
/// A constant vector keeps scale 1.
pub fn standardize(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 * mean.abs().max(1.0) {
        sd
    } else {
        1.0
    };
    (mean, scale)
}

/// Merges exactly repeated inputs, averaging their targets. First-seen order.
pub fn dedup(x: &[Point], y: &[f64]) -> (Vec<Point>, Vec<f64>) {
    let mut xs: Vec<Point> = Vec::with_capacity(x.len());
    let mut sums: Vec<(f64, usize)> = Vec::with_capacity(x.len());
    for (p, &v) in x.iter().zip(y) {
        match xs.iter().position(|q| q == p) {
            Some(i) => {
                sums[i].0 += v;
                sums[i].1 += 1;
            }
            None => {
                xs.push(*p);
                sums.push((v, 1));
            }
        }
    }
    (xs, sums.into_iter().map(|(s, c)| s / c as f64).collect())
}

fn gram(x: &[Point], h: Hyper, jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = kernel(&x[i], &x[j], h.sigma_f2, h.length_scale);
        if i == j {
            k + jitter * h.sigma_f2
        } else {
            k
        }
    })
}

fn min_pair_dist(x: &[Point]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            m = m.min(sq_dist(&x[i], &x[j]).sqrt());
        }
    }
    m
}

fn factor(x: &[Point], h: Hyper) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    for &jit in &JITTER_LADDER {
        if let Some(c) = Cholesky::new(gram(x, h, jit)) {
            return Ok((c, jit));
        }
    }
    Err(GpError::NotPositiveDefinite {
        n: x.len(),
        jitter: *JITTER_LADDER.last().unwrap(),
        min_dist: min_pair_dist(x),
        length_scale: h.length_scale,
    })
}

fn log_lik_of(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let ll = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    (ll, alpha)
}

/// Log marginal likelihood of standardised (deduplicated) targets, or `None`
/// when the covariance cannot be factorised.
pub fn log_marginal_likelihood(x: &[Point], y: &[f64], h: Hyper) -> Option<f64> {
    let (x, y) = dedup(x, y);
    let (mean, scale) = standardize(&y);
    let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale));
    let (chol, _) = factor(&x, h).ok()?;
    Some(log_lik_of(&chol, &ys).0)
}

/// The 7 x 7 log-spaced starting grid.
pub fn hyper_grid() -> Vec<Hyper> {
    let lin = |(lo, hi): (f64, f64), i: usize| {
        (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (GRID - 1) as f64).exp()
    };
    let mut out = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            out.push(Hyper {
                sigma_f2: lin(SIGMA_F2_RANGE, i),
                length_scale: lin(LENGTH_RANGE, j),
            });
        }
    }
    out
}

fn check(x: &[Point], y: &[f64]) -> Result<(), GpError> {
    if x.len() != y.len() {
        return Err(GpError::Mismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.is_empty() {
        return Err(GpError::Empty);
    }
    for (i, (p, v)) in x.iter().zip(y).enumerate() {
        if !(p[0].is_finite() && p[1].is_finite() && v.is_finite()) {
            return Err(GpError::NonFinite(i));
        }
    }
    Ok(())
}

impl GpModel {
    /// Fits hyperparameters by maximum likelihood. Fewer than two distinct
    /// inputs fall back to [`DEFAULT_HYPER`].
    pub fn fit(x: &[Point], y: &[f64]) -> Result<Self, GpError> {
        check(x, y)?;
        let (x, y) = dedup(x, y);
        if x.len() < 2 {
            return Self::build(x, y, DEFAULT_HYPER);
        }
        let (mean, scale) = standardize(&y);
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale));
        let score = |h: Hyper| -> f64 {
            match factor(&x, h) {
                Ok((c, _)) => log_lik_of(&c, &ys).0,
                Err(_) => f64::NEG_INFINITY,
            }
        };

        let mut best = (f64::NEG_INFINITY, hyper_grid()[0]);
        for h in hyper_grid() {
            let s = score(h);
            if s > best.0 {
                best = (s, h);
            }
        }

        // Coordinate descent on (ln sigma_f2, ln length_scale) inside the grid box.
        let bounds = [
            (SIGMA_F2_RANGE.0.ln(), SIGMA_F2_RANGE.1.ln()),
            (LENGTH_RANGE.0.ln(), LENGTH_RANGE.1.ln()),
        ];
        let mut theta = [best.1.sigma_f2.ln(), best.1.length_scale.ln()];
        let mut step = [
            (bounds[0].1 - bounds[0].0) / (GRID - 1) as f64 / 2.0,
            (bounds[1].1 - bounds[1].0) / (GRID - 1) as f64 / 2.0,
        ];
        let to_hyper = |t: [f64; 2]| Hyper {
            sigma_f2: t[0].exp(),
            length_scale: t[1].exp(),
        };
        for _ in 0..MAX_DESCENT_STEPS {
            let mut moved = false;
            for d in 0..2 {
                for sign in [1.0, -1.0] {
                    let mut t = theta;
                    t[d] = (t[d] + sign * step[d]).clamp(bounds[d].0, bounds[d].1);
                    if t[d] == theta[d] {
                        continue;
                    }
                    let s = score(to_hyper(t));
                    if s > best.0 {
                        best = (s, to_hyper(t));
                        theta = t;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                step = [step[0] / 2.0, step[1] / 2.0];
                if step[0] < 1e-4 && step[1] < 1e-4 {
                    break;
                }
            }
        }
        if best.0 == f64::NEG_INFINITY {
            return Err(factor(&x, best.1).unwrap_err());
        }
        Self::build(x, y, best.1)
    }

    /// Conditions on the data with fixed hyperparameters.
    pub fn with_hyperparameters(x: &[Point], y: &[f64], h: Hyper) -> Result<Self, GpError> {
        check(x, y)?;
        let (x, y) = dedup(x, y);
        Self::build(x, y, h)
    }

    fn build(x: Vec<Point>, y: Vec<f64>, h: Hyper) -> Result<Self, GpError> {
        if !(h.sigma_f2 > 0.0
            && h.length_scale > 0.0
            && h.sigma_f2.is_finite()
            && h.length_scale.is_finite())
        {
            return Err(GpError::BadHyper {
                sigma_f2: h.sigma_f2,
                length_scale: h.length_scale,
            });
        }
        let (y_mean, y_scale) = standardize(&y);
        let y_std: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let (chol, jitter) = factor(&x, h)?;
        let ys = DVector::from_column_slice(&y_std);
        let (log_lik, alpha) = log_lik_of(&chol, &ys);
        Ok(GpModel {
            x,
            y_std,
            hyper: h,
            jitter,
            chol,
            alpha,
            y_mean,
            y_scale,
            log_lik,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn inputs(&self) -> &[Point] {
        &self.x
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_lik
    }

    /// Target shift and scale applied before fitting.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Prior variance in the original units.
    pub fn prior_variance(&self) -> f64 {
        self.hyper.sigma_f2 * self.y_scale * self.y_scale
    }

    pub fn posterior(&self, p: &Point) -> Posterior {
        let h = self.hyper;
        let kx = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|q| kernel(p, q, h.sigma_f2, h.length_scale)),
        );
        let mu = kx.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("triangular solve");
        let var = (h.sigma_f2 - v.dot(&v)).clamp(0.0, h.sigma_f2);
        Posterior {
            mu: self.y_mean + self.y_scale * mu,
            var: var * self.y_scale * self.y_scale,
        }
    }

    /// `x,y,target` rows followed by a hyperparameter comment line.
    pub fn write_debug_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,target")?;
        for (p, v) in self.x.iter().zip(&self.y_std) {
            writeln!(w, "{},{},{}", p[0], p[1], self.y_mean + self.y_scale * v)?;
        }
        writeln!(
            w,
            "# sigma_f2={} length_scale={} jitter={} y_mean={} y_scale={} log_lik={}",
            self.hyper.sigma_f2,
            self.hyper.length_scale,
            self.jitter,
            self.y_mean,
            self.y_scale,
            self.log_lik
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(&[0.3, 0.4], &[0.3, 0.4], 2.5, 0.7), 2.5);
        let ell = 0.25;
        let d = ell * 2f64.sqrt();
        assert!((kernel(&[0.0, 0.0], &[d, 0.0], 1.0, ell) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn single_point_interpolates() {
        let m = GpModel::fit(&[[0.2, 0.2]], &[3.5]).unwrap();
        let p = m.posterior(&[0.2, 0.2]);
        assert!((p.mu - 3.5).abs() < 1e-12);
        assert!(p.var < 1e-9);
    }

    #[test]
    fn far_query_recovers_prior() {
        let x = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]];
        let y = [1.0, 2.0, 4.0];
        let m = GpModel::with_hyperparameters(
            &x,
            &y,
            Hyper {
                sigma_f2: 1.0,
                length_scale: 0.1,
            },
        )
        .unwrap();
        let p = m.posterior(&[50.0, 50.0]);
        let (mean, _) = m.standardization();
        assert!((p.mu - mean).abs() < 1e-12);
        assert!((p.var - m.prior_variance()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_midpoint_is_zero() {
        let m = GpModel::with_hyperparameters(
            &[[0.2, 0.5], [0.8, 0.5]],
            &[1.5, -1.5],
            Hyper {
                sigma_f2: 1.0,
                length_scale: 0.4,
            },
        )
        .unwrap();
        assert!(m.posterior(&[0.5, 0.5]).mu.abs() < 1e-12);
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let x = [[0.1, 0.1], [0.5, 0.9], [0.9, 0.2], [0.4, 0.4]];
        let m = GpModel::fit(&x, &[0.25; 4]).unwrap();
        for q in [[0.0, 0.0], [0.3, 0.7], [1.0, 1.0]] {
            assert!((m.posterior(&q).mu - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicates_are_averaged() {
        let (x, y) = dedup(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]], &[1.0, 5.0, 3.0]);
        assert_eq!(x, vec![[0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(y, vec![2.0, 5.0]);
        let m = GpModel::fit(&[[0.0, 0.0], [0.0, 0.0]], &[1.0, 3.0]).unwrap();
        assert_eq!(m.n(), 1);
    }

    #[test]
    fn fitted_likelihood_dominates_grid() {
        let mut rng = crate::rng::stream(4);
        let x: Vec<Point> = (0..25).map(|_| [rng.random(), rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|p| (5.0 * p[0]).sin() + p[1] * p[1]).collect();
        let m = GpModel::fit(&x, &y).unwrap();
        for h in hyper_grid() {
            if let Some(ll) = log_marginal_likelihood(&x, &y, h) {
                assert!(m.log_likelihood() >= ll - 1e-9, "{h:?}");
            }
        }
    }

    #[test]
    fn scaler_maps_box_to_unit_square() {
        let s = BoxScaler::new([10.0, -5.0], [20.0, -5.0]);
        assert_eq!(s.apply([15.0, -5.0]), [0.5, 0.0]);
    }

    #[test]
    fn input_errors() {
        assert_eq!(GpModel::fit(&[], &[]).unwrap_err(), GpError::Empty);
        assert!(matches!(
            GpModel::fit(&[[0.0, 0.0]], &[1.0, 2.0]),
            Err(GpError::Mismatch { .. })
        ));
        assert_eq!(
            GpModel::fit(&[[f64::NAN, 0.0]], &[1.0]).unwrap_err(),
            GpError::NonFinite(0)
        );
    }
}
