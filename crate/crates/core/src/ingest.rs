// SPDX-License-Identifier: Apache-2.0

//! From raw taxi GPS traces to a network and path demands.
//!
//! Pipeline: [`clean`] (null, bounding-box and status-blip filters),
//! [`extract_trips`], [`grid_demands`], [`fit_exponential`] per demand, and
//! [`extract_network`] by k-means over record positions. [`synth_traces`]
//! produces traces with known rates for end-to-end checks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::demand::{uniform_grid_pmf, PathDemand};
use crate::network::{Edge, NetworkError, Node, NodeId, RoadNetwork};
use crate::par::{self, Execution};
use crate::rng;

pub const GPS_HEADER: [&str; 7] = [
    "VehicleNum",
    "Time",
    "Longtitude",
    "Latitude",
    "Speed",
    "Degrees",
    "Status",
];
pub const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("no records left after cleaning")]
    EmptyAfterClean,
    #[error("need at least 2 timestamps, got {0}")]
    TooFewTimestamps(usize),
    #[error("all {0} inter-arrival gaps are zero")]
    ZeroGaps(usize),
    #[error("k-means needs k >= 2 and at most as many distinct points as clusters (k = {k}, points = {points})")]
    BadK { k: usize, points: usize },
    #[error("extracted network rejected: {0}")]
    Network(#[from] NetworkError),
    #[error("no demands survived extraction")]
    NoDemands,
    #[error("invalid ingest config: {0}")]
    Config(String),
}

/// One CSV row before parsing. Empty fields are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawRecord {
    pub fields: [Option<String>; 7],
}

impl RawRecord {
    pub fn from_strs(v: [&str; 7]) -> Self {
        RawRecord {
            fields: v.map(|s| {
                if s.trim().is_empty() {
                    None
                } else {
                    Some(s.trim().to_string())
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsRecord {
    pub vehicle: String,
    /// Seconds since the Unix epoch.
    pub time: i64,
    pub lon: f64,
    pub lat: f64,
    pub speed_kmh: f64,
    pub heading_deg: f64,
    pub status: i64,
}

pub fn parse_time(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s, TIME_FORMAT)
        .ok()
        .map(|t| t.and_utc().timestamp())
}

pub fn format_time(t: i64) -> String {
    DateTime::from_timestamp(t, 0)
        .map(|d| d.naive_utc().format(TIME_FORMAT).to_string())
        .unwrap_or_default()
}

impl GpsRecord {
    /// `None` if any field is missing or unparseable.
    pub fn parse(raw: &RawRecord) -> Option<GpsRecord> {
        let f = |i: usize| raw.fields[i].as_deref();
        let num = |i: usize| -> Option<f64> { f(i)?.parse::<f64>().ok().filter(|v| v.is_finite()) };
        Some(GpsRecord {
            vehicle: f(0)?.to_string(),
            time: parse_time(f(1)?)?,
            lon: num(2)?,
            lat: num(3)?,
            speed_kmh: num(4)?,
            heading_deg: num(5)?,
            status: f(6)?.parse().ok()?,
        })
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            fields: [
                Some(self.vehicle.clone()),
                Some(format_time(self.time)),
                Some(format!("{:.6}", self.lon)),
                Some(format!("{:.6}", self.lat)),
                Some(format!("{:.1}", self.speed_kmh)),
                Some(format!("{:.0}", self.heading_deg)),
                Some(self.status.to_string()),
            ],
        }
    }
}

/// Longitude / latitude rectangle in degrees, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Default for BBox {
    /// Shanghai.
    fn default() -> Self {
        BBox {
            lon_min: 120.852326,
            lon_max: 122.118227,
            lat_min: 30.691701,
            lat_max: 31.874634,
        }
    }
}

impl BBox {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.lon_min + self.lon_max) / 2.0,
            (self.lat_min + self.lat_max) / 2.0,
        )
    }
}

/// Equirectangular projection to metres about a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    pub fn about(bbox: &BBox) -> Self {
        let (lon0, lat0) = bbox.center();
        Projection { lon0, lat0 }
    }

    pub fn forward(&self, lon: f64, lat: f64) -> [f64; 2] {
        let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
        [
            (lon - self.lon0) * k * (self.lat0.to_radians()).cos(),
            (lat - self.lat0) * k,
        ]
    }

    pub fn inverse(&self, p: [f64; 2]) -> (f64, f64) {
        let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
        (
            self.lon0 + p[0] / (k * self.lat0.to_radians().cos()),
            self.lat0 + p[1] / k,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterReport {
    pub input: usize,
    pub removed_null: usize,
    pub removed_bbox: usize,
    pub removed_blip: usize,
    pub output: usize,
}

impl FilterReport {
    pub fn additive(&self) -> bool {
        self.input == self.output + self.removed_null + self.removed_bbox + self.removed_blip
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanConfig {
    pub bbox: BBox,
    /// Neighbour window of the status-blip filter.
    pub blip_window_s: i64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            bbox: BBox::default(),
            blip_window_s: 120,
        }
    }
}

fn sort_by_vehicle_time(recs: &mut [GpsRecord]) {
    recs.sort_by(|a, b| a.vehicle.cmp(&b.vehicle).then(a.time.cmp(&b.time)));
}

/// Applies the three filters in order and returns records sorted by
/// (vehicle, time).
///
/// A record is a status blip when both same-vehicle neighbours exist, lie
/// within the window, and carry a different status than it.
pub fn clean(raw: &[RawRecord], cfg: &CleanConfig) -> (Vec<GpsRecord>, FilterReport) {
    let mut rep = FilterReport {
        input: raw.len(),
        ..FilterReport::default()
    };
    let parsed: Vec<GpsRecord> = raw.iter().filter_map(GpsRecord::parse).collect();
    rep.removed_null = raw.len() - parsed.len();
    let mut inside: Vec<GpsRecord> = parsed
        .into_iter()
        .filter(|r| cfg.bbox.contains(r.lon, r.lat))
        .collect();
    rep.removed_bbox = raw.len() - rep.removed_null - inside.len();
    sort_by_vehicle_time(&mut inside);

    let n = inside.len();
    let mut keep = vec![true; n];
    for i in 1..n.saturating_sub(1) {
        let (p, c, q) = (&inside[i - 1], &inside[i], &inside[i + 1]);
        if p.vehicle == c.vehicle
            && q.vehicle == c.vehicle
            && c.status != p.status
            && c.status != q.status
            && c.time - p.time <= cfg.blip_window_s
            && q.time - c.time <= cfg.blip_window_s
        {
            keep[i] = false;
        }
    }
    let out: Vec<GpsRecord> = inside
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    rep.removed_blip = n - out.len();
    rep.output = out.len();
    (out, rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub records: Vec<GpsRecord>,
}

impl Trip {
    pub fn start(&self) -> &GpsRecord {
        &self.records[0]
    }

    pub fn end(&self) -> &GpsRecord {
        self.records.last().unwrap()
    }
}

/// Maximal runs of `occupied` status per vehicle. Records repeating the
/// previous timestamp are skipped; runs shorter than two records are dropped.
pub fn extract_trips(records: &[GpsRecord], occupied: i64) -> Vec<Trip> {
    let mut sorted = records.to_vec();
    sort_by_vehicle_time(&mut sorted);
    let mut trips = Vec::new();
    let mut run: Vec<GpsRecord> = Vec::new();
    let flush = |run: &mut Vec<GpsRecord>, trips: &mut Vec<Trip>| {
        if run.len() >= 2 {
            trips.push(Trip {
                records: std::mem::take(run),
            });
        } else {
            run.clear();
        }
    };
    for r in sorted {
        let continues = run
            .last()
            .is_some_and(|l: &GpsRecord| l.vehicle == r.vehicle);
        if !continues {
            flush(&mut run, &mut trips);
        }
        if r.status != occupied {
            flush(&mut run, &mut trips);
            continue;
        }
        if run.last().is_some_and(|l| l.time >= r.time) {
            continue;
        }
        run.push(r);
    }
    flush(&mut run, &mut trips);
    trips
}

/// Square cells anchored at the south-west corner of the bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: [f64; 2],
    pub cell_size_m: f64,
}

pub type Cell = (i64, i64);

impl Grid {
    pub fn new(bbox: &BBox, proj: &Projection, cell_size_m: f64) -> Self {
        Grid {
            origin: proj.forward(bbox.lon_min, bbox.lat_min),
            cell_size_m,
        }
    }

    /// Half-open cells: a point on a boundary belongs to the higher cell.
    pub fn cell(&self, p: [f64; 2]) -> Cell {
        (
            ((p[0] - self.origin[0]) / self.cell_size_m).floor() as i64,
            ((p[1] - self.origin[1]) / self.cell_size_m).floor() as i64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDemand {
    pub origin_cell: Cell,
    pub dest_cell: Cell,
    /// Trip start times, sorted.
    pub times: Vec<i64>,
    /// Mean projected trip start and end positions.
    pub origin_centroid: [f64; 2],
    pub dest_centroid: [f64; 2],
}

/// Aggregates trips by (origin cell, destination cell). Returns the demands
/// in cell order and the number of single-cell trips discarded.
pub fn grid_demands(trips: &[Trip], proj: &Projection, grid: &Grid) -> (Vec<GriddedDemand>, usize) {
    let mut acc: BTreeMap<(Cell, Cell), (Vec<i64>, [f64; 4])> = BTreeMap::new();
    let mut degenerate = 0;
    for t in trips {
        let (s, e) = (t.start(), t.end());
        let ps = proj.forward(s.lon, s.lat);
        let pe = proj.forward(e.lon, e.lat);
        let (co, cd) = (grid.cell(ps), grid.cell(pe));
        if co == cd {
            degenerate += 1;
            continue;
        }
        let entry = acc
            .entry((co, cd))
            .or_insert_with(|| (Vec::new(), [0.0; 4]));
        entry.0.push(s.time);
        entry.1[0] += ps[0];
        entry.1[1] += ps[1];
        entry.1[2] += pe[0];
        entry.1[3] += pe[1];
    }
    let out = acc
        .into_iter()
        .map(|((o, d), (mut times, s))| {
            times.sort_unstable();
            let n = times.len() as f64;
            GriddedDemand {
                origin_cell: o,
                dest_cell: d,
                times,
                origin_centroid: [s[0] / n, s[1] / n],
                dest_centroid: [s[2] / n, s[3] / n],
            }
        })
        .collect();
    (out, degenerate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    /// Reciprocal of the mean gap, per second.
    pub lambda: f64,
    pub ks_stat: f64,
    pub p_value: f64,
    pub accepted: bool,
}

pub const KS_ALPHA: f64 = 0.05;

/// Survival function of the Kolmogorov distribution, `P(K > t)`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        // Theta-function form converges fast for small t.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * t * t);
        let s: f64 = (1..=20)
            .map(|k| ((2 * k - 1) as f64).powi(2) * c)
            .map(f64::exp)
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * t * t).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic KS p-value with the small-sample correction
/// `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) * D`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// Fits an exponential to inter-arrival gaps and tests the fit.
pub fn fit_gaps(gaps: &[f64]) -> Result<ExpFit, IngestError> {
    if gaps.is_empty() {
        return Err(IngestError::TooFewTimestamps(gaps.len() + 1));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if !(mean > 0.0) {
        return Err(IngestError::ZeroGaps(gaps.len()));
    }
    let lambda = 1.0 / mean;
    let ks_stat = ks_statistic(gaps, |x| 1.0 - (-lambda * x).exp());
    let p_value = ks_p_value(ks_stat, gaps.len());
    Ok(ExpFit {
        lambda,
        ks_stat,
        p_value,
        accepted: p_value > KS_ALPHA,
    })
}

/// Fits the gaps between sorted occurrence times (seconds).
pub fn fit_exponential(times: &[i64]) -> Result<ExpFit, IngestError> {
    if times.len() < 2 {
        return Err(IngestError::TooFewTimestamps(times.len()));
    }
    let mut t = times.to_vec();
    t.sort_unstable();
    let gaps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    fit_gaps(&gaps)
}

/// Plain k-means over planar points with k-means++ seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<[f64; 2]>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub reseeds: usize,
    pub merged: usize,
}

fn d2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(centers: &[[f64; 2]], p: &[f64; 2]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centers.iter().enumerate() {
        let d = d2(c, p);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

pub const KMEANS_MAX_ITERS: usize = 100;
const MAX_RESEEDS: usize = 10;

/// Empty clusters are re-seeded at the point farthest from its centre, up to
/// ten times each, and dropped after that.
pub fn kmeans(
    points: &[[f64; 2]],
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<KMeans, IngestError> {
    let mut distinct = points.to_vec();
    distinct.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    distinct.dedup();
    if k < 2 || distinct.len() < k {
        return Err(IngestError::BadK {
            k,
            points: distinct.len(),
        });
    }
    let mut rng = rng::stream(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut dist: Vec<f64> = points.iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = dist.iter().rposition(|&d| d > 0.0).unwrap();
        for (i, &d) in dist.iter().enumerate() {
            if u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(d2(p, &c));
        }
    }

    let mut assignment = vec![usize::MAX; points.len()];
    let mut reseed_count = vec![0usize; k];
    let mut alive = vec![true; k];
    let (mut iterations, mut reseeds) = (0, 0);
    loop {
        let live: Vec<usize> = (0..k).filter(|&j| alive[j]).collect();
        let live_centers: Vec<[f64; 2]> = live.iter().map(|&j| centers[j]).collect();
        let next: Vec<usize> = par::map_with(exec, points, |p| live[nearest(&live_centers, p)]);
        let changed = next != assignment;
        assignment = next;
        iterations += 1;

        let mut sums = vec![[0.0f64; 3]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        let mut reseeded = false;
        for j in 0..k {
            if !alive[j] {
                continue;
            }
            if sums[j][2] > 0.0 {
                centers[j] = [sums[j][0] / sums[j][2], sums[j][1] / sums[j][2]];
            } else if reseed_count[j] < MAX_RESEEDS {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        d2(&points[a], &centers[assignment[a]])
                            .total_cmp(&d2(&points[b], &centers[assignment[b]]))
                    })
                    .unwrap();
                centers[j] = points[far];
                reseed_count[j] += 1;
                reseeds += 1;
                reseeded = true;
            } else {
                alive[j] = false;
            }
        }
        if (!changed && !reseeded) || iterations >= KMEANS_MAX_ITERS {
            break;
        }
    }
    // Drop dead or empty clusters and renumber.
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    let mut remap = vec![usize::MAX; k];
    let mut kept = Vec::new();
    for j in 0..k {
        if counts[j] > 0 {
            remap[j] = kept.len();
            kept.push(centers[j]);
        }
    }
    let merged = k - kept.len();
    let assignment = assignment.into_iter().map(|a| remap[a]).collect();
    Ok(KMeans {
        centers: kept,
        assignment,
        iterations,
        reseeds,
        merged,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum CandidateRule {
    #[default]
    All,
    /// Nodes nearest to each point of interest, given as (lon, lat).
    NearestToPoi(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub k_clusters: usize,
    pub seed: u64,
    /// Consecutive records further apart in time do not form an edge.
    pub max_gap_s: i64,
    pub candidate_rule: CandidateRule,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            k_clusters: 1000,
            seed: 0,
            max_gap_s: 600,
            candidate_rule: CandidateRule::All,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractedNetwork {
    pub network: RoadNetwork,
    pub kmeans: KMeans,
    /// Transitions observed per edge, in edge order.
    pub transitions: Vec<usize>,
}

/// Nodes are cluster centres; an edge joins clusters visited by consecutive
/// records of one vehicle. Its length is the mean over such transitions of
/// `|c_u - p_a| + |p_a - p_b| + |p_b - c_v|`, which is never shorter than the
/// straight line between the centres.
pub fn extract_network(
    records: &[GpsRecord],
    proj: &Projection,
    cfg: &NetworkConfig,
    exec: Execution,
) -> Result<ExtractedNetwork, IngestError> {
    let mut recs = records.to_vec();
    sort_by_vehicle_time(&mut recs);
    let pts: Vec<[f64; 2]> = recs.iter().map(|r| proj.forward(r.lon, r.lat)).collect();
    let km = kmeans(&pts, cfg.k_clusters, cfg.seed, exec)?;
    let c = &km.centers;
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for i in 1..recs.len() {
        let (a, b) = (&recs[i - 1], &recs[i]);
        if a.vehicle != b.vehicle || b.time - a.time > cfg.max_gap_s {
            continue;
        }
        let (u, v) = (km.assignment[i - 1], km.assignment[i]);
        if u == v {
            continue;
        }
        let len = d2(&c[u], &pts[i - 1]).sqrt()
            + d2(&pts[i - 1], &pts[i]).sqrt()
            + d2(&pts[i], &c[v]).sqrt();
        let e = acc.entry((u.min(v), u.max(v))).or_insert((0.0, 0));
        e.0 += len;
        e.1 += 1;
    }
    let candidate: Vec<bool> = match &cfg.candidate_rule {
        CandidateRule::All => vec![true; c.len()],
        CandidateRule::NearestToPoi(pois) => {
            let mut flags = vec![false; c.len()];
            for &(lon, lat) in pois {
                flags[nearest(c, &proj.forward(lon, lat))] = true;
            }
            flags
        }
    };
    let nodes: Vec<Node> = c
        .iter()
        .enumerate()
        .map(|(j, p)| Node {
            id: j as NodeId,
            x_m: p[0],
            y_m: p[1],
            is_candidate: candidate[j],
        })
        .collect();
    let mut edges = Vec::with_capacity(acc.len());
    let mut transitions = Vec::with_capacity(acc.len());
    for ((u, v), (sum, n)) in acc {
        edges.push(Edge {
            u: u as NodeId,
            v: v as NodeId,
            length_m: sum / n as f64,
        });
        transitions.push(n);
    }
    let network = RoadNetwork::new(nodes, edges)?;
    Ok(ExtractedNetwork {
        network,
        kmeans: km,
        transitions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub clean: CleanConfig,
    pub occupied_code: i64,
    pub cell_size_m: f64,
    pub min_occurrences: usize,
    pub network: NetworkConfig,
    /// Battery pmf attached to every extracted demand, kWh.
    pub battery_pmf: Vec<(f64, f64)>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            clean: CleanConfig::default(),
            occupied_code: 1,
            cell_size_m: 1000.0,
            min_occurrences: 2,
            network: NetworkConfig::default(),
            battery_pmf: uniform_grid_pmf(5.0, 100.0, 5.0),
        }
    }
}

/// One fitted node-level demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandFit {
    pub origin: NodeId,
    pub dest: NodeId,
    pub occurrences: usize,
    pub fit: ExpFit,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub filter: FilterReport,
    pub trips: usize,
    pub degenerate_trips: usize,
    pub cell_demands: usize,
    pub below_min_occurrences: usize,
    pub same_node: usize,
    pub fit_failures: usize,
    pub demands: usize,
    pub nodes: usize,
    pub edges: usize,
    pub merged_clusters: usize,
    pub pass_rate: f64,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.filter;
        writeln!(f, "input_records: {}", r.input)?;
        writeln!(f, "removed_null: {}", r.removed_null)?;
        writeln!(f, "removed_bbox: {}", r.removed_bbox)?;
        writeln!(f, "removed_status_blip: {}", r.removed_blip)?;
        writeln!(f, "output_records: {}", r.output)?;
        writeln!(f, "trips: {}", self.trips)?;
        writeln!(f, "degenerate_trips: {}", self.degenerate_trips)?;
        writeln!(f, "cell_demands: {}", self.cell_demands)?;
        writeln!(f, "below_min_occurrences: {}", self.below_min_occurrences)?;
        writeln!(f, "same_node_demands: {}", self.same_node)?;
        writeln!(f, "fit_failures: {}", self.fit_failures)?;
        writeln!(f, "demands: {}", self.demands)?;
        writeln!(f, "nodes: {}", self.nodes)?;
        writeln!(f, "edges: {}", self.edges)?;
        writeln!(f, "merged_clusters: {}", self.merged_clusters)?;
        writeln!(f, "pass_rate: {:.4}", self.pass_rate)
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub network: RoadNetwork,
    pub demands: Vec<PathDemand>,
    pub fits: Vec<DemandFit>,
    pub report: IngestReport,
}

/// Runs the whole pipeline. Cell demands are attached to the node nearest
/// their origin and destination centroids; cell pairs that land on the same
/// node pair are merged before fitting.
pub fn run_pipeline(
    raw: &[RawRecord],
    cfg: &IngestConfig,
    exec: Execution,
) -> Result<IngestOutput, IngestError> {
    if !(cfg.cell_size_m > 0.0) {
        return Err(IngestError::Config("cell_size_m must be > 0".into()));
    }
    let (clean_recs, filter) = clean(raw, &cfg.clean);
    if clean_recs.is_empty() {
        return Err(IngestError::EmptyAfterClean);
    }
    let proj = Projection::about(&cfg.clean.bbox);
    let grid = Grid::new(&cfg.clean.bbox, &proj, cfg.cell_size_m);
    let trips = extract_trips(&clean_recs, cfg.occupied_code);
    let (cells, degenerate) = grid_demands(&trips, &proj, &grid);
    let net = extract_network(&clean_recs, &proj, &cfg.network, exec)?;
    let centers = &net.kmeans.centers;

    let mut report = IngestReport {
        filter,
        trips: trips.len(),
        degenerate_trips: degenerate,
        cell_demands: cells.len(),
        nodes: net.network.len(),
        edges: net.network.edges().len(),
        merged_clusters: net.kmeans.merged,
        ..IngestReport::default()
    };
    let mut by_node: BTreeMap<(NodeId, NodeId), Vec<i64>> = BTreeMap::new();
    for c in &cells {
        let o = nearest(centers, &c.origin_centroid) as NodeId;
        let d = nearest(centers, &c.dest_centroid) as NodeId;
        if o == d {
            report.same_node += 1;
            continue;
        }
        by_node
            .entry((o, d))
            .or_default()
            .extend_from_slice(&c.times);
    }
    let groups: Vec<((NodeId, NodeId), Vec<i64>)> = by_node
        .into_iter()
        .filter(|(_, t)| {
            let keep = t.len() >= cfg.min_occurrences.max(2);
            if !keep {
                report.below_min_occurrences += 1;
            }
            keep
        })
        .collect();
    let fitted = par::map_with(exec, &groups, |(_, t)| fit_exponential(t));
    let mut fits = Vec::new();
    let mut demands = Vec::new();
    for (((o, d), t), f) in groups.iter().zip(fitted) {
        match f {
            Ok(fit) => {
                let pd = PathDemand::new(*o, *d, fit.lambda, cfg.battery_pmf.clone())
                    .map_err(|e| IngestError::Config(e.to_string()))?;
                demands.push(pd);
                fits.push(DemandFit {
                    origin: *o,
                    dest: *d,
                    occurrences: t.len(),
                    fit,
                });
            }
            Err(e) => {
                log::warn!("demand ({o}, {d}) not fitted: {e}");
                report.fit_failures += 1;
            }
        }
    }
    if demands.is_empty() {
        return Err(IngestError::NoDemands);
    }
    report.demands = demands.len();
    report.pass_rate = fits.iter().filter(|f| f.fit.accepted).count() as f64 / fits.len() as f64;
    Ok(IngestOutput {
        network: net.network,
        demands,
        fits,
        report,
    })
}

pub fn write_fits<W: Write>(fits: &[DemandFit], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "origin,dest,occurrences,rate_per_hour,ks_stat,p_value,accepted"
    )?;
    for f in fits {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            f.origin,
            f.dest,
            f.occurrences,
            f.fit.lambda * 3600.0,
            f.fit.ks_stat,
            f.fit.p_value,
            f.fit.accepted as u8
        )?;
    }
    Ok(())
}

pub fn read_gps_csv(path: &Path) -> Result<Vec<RawRecord>, IngestError> {
    let err = |msg: String| IngestError::File {
        path: path.display().to_string(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != GPS_HEADER {
        return Err(err(format!("expected header {}", GPS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 7 {
            out.push(RawRecord::default());
            continue;
        }
        let v: Vec<&str> = rec.iter().collect();
        out.push(RawRecord::from_strs([
            v[0], v[1], v[2], v[3], v[4], v[5], v[6],
        ]));
    }
    Ok(out)
}

pub fn write_gps_csv<W: Write>(records: &[RawRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", GPS_HEADER.join(","))?;
    for r in records {
        let f: Vec<&str> = r
            .fields
            .iter()
            .map(|f| f.as_deref().unwrap_or(""))
            .collect();
        writeln!(w, "{}", f.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapDist {
    Exponential,
    /// Uniform on `(0, 2 / rate)`, same mean as the exponential.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotspotPair {
    /// (lon, lat) of trip origins and destinations.
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub rate_per_hour: f64,
    pub gaps: GapDist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub pairs: Vec<HotspotPair>,
    pub duration_h: f64,
    /// Start of the trace, seconds since the epoch.
    pub start: i64,
    pub speed_mps: f64,
    pub record_interval_s: i64,
    /// Uniform scatter of trip endpoints around their hotspot, metres.
    pub scatter_m: f64,
    pub bbox: BBox,
    /// Fraction of rows emitted with a blank field.
    pub null_rate: f64,
    /// Fraction of rows emitted outside the bounding box.
    pub out_of_bbox_rate: f64,
    /// Fraction of trips with one flipped status record.
    pub blip_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            pairs: Vec::new(),
            duration_h: 24.0,
            start: parse_time("2007-02-20 00:00:00").unwrap(),
            speed_mps: 10.0,
            record_interval_s: 60,
            scatter_m: 50.0,
            bbox: BBox::default(),
            null_rate: 0.0,
            out_of_bbox_rate: 0.0,
            blip_rate: 0.0,
        }
    }
}

/// One occupied taxi trip per demand arrival, with an idle record before
/// and after it. Vehicles and trips are one-to-one. Output is sorted by time
/// and identical for identical `(spec, seed)`.
pub fn synth_traces(spec: &SynthSpec, seed: u64) -> Vec<RawRecord> {
    let proj = Projection::about(&spec.bbox);
    let horizon = spec.duration_h * 3600.0;
    let mut recs: Vec<(i64, u64, GpsRecord)> = Vec::new();
    let mut trip_no: u64 = 0;
    for (pi, pair) in spec.pairs.iter().enumerate() {
        let mut rng = rng::stream(rng::derive_seed(seed, &[pi as u64]));
        let rate = pair.rate_per_hour / 3600.0;
        let exp = Exp::new(rate).unwrap();
        let a = proj.forward(pair.from.0, pair.from.1);
        let b = proj.forward(pair.to.0, pair.to.1);
        let mut t = 0.0;
        loop {
            t += match pair.gaps {
                GapDist::Exponential => exp.sample(&mut rng),
                GapDist::Uniform => rng.random::<f64>() * 2.0 / rate,
            };
            if t >= horizon {
                break;
            }
            trip_no += 1;
            let vehicle = format!("{}", 10000 + trip_no);
            let mut scatter = |p: [f64; 2]| {
                let r = spec.scatter_m * rng.random::<f64>().sqrt();
                let th = rng.random::<f64>() * std::f64::consts::TAU;
                [p[0] + r * th.cos(), p[1] + r * th.sin()]
            };
            let (s, e) = (scatter(a), scatter(b));
            let len = d2(&s, &e).sqrt();
            let dur = (len / spec.speed_mps).ceil().max(1.0) as i64;
            let t0 = spec.start + t.floor() as i64;
            let heading = (e[0] - s[0])
                .atan2(e[1] - s[1])
                .to_degrees()
                .rem_euclid(360.0);
            let mut push = |time: i64, p: [f64; 2], speed: f64, status: i64| {
                let (lon, lat) = proj.inverse(p);
                let rec = GpsRecord {
                    vehicle: vehicle.clone(),
                    time,
                    lon,
                    lat,
                    speed_kmh: speed,
                    heading_deg: heading,
                    status,
                };
                recs.push((time, trip_no, rec));
            };
            push(t0 - spec.record_interval_s, s, 0.0, 0);
            let mut k = 0;
            while k * spec.record_interval_s < dur {
                let f = (k * spec.record_interval_s) as f64 / dur as f64;
                push(
                    t0 + k * spec.record_interval_s,
                    [s[0] + f * (e[0] - s[0]), s[1] + f * (e[1] - s[1])],
                    spec.speed_mps * 3.6,
                    1,
                );
                k += 1;
            }
            push(t0 + dur, e, 0.0, 1);
            push(t0 + dur + spec.record_interval_s, e, 0.0, 0);
        }
    }
    recs.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)));

    // Noise uses its own stream so the clean trace does not depend on it.
    let mut noise = rng::stream(rng::derive_seed(seed, &[u64::MAX]));
    let n_trips = trip_no;
    let mut blip_done = vec![false; n_trips as usize + 1];
    let mut occupied_seen = vec![0usize; n_trips as usize + 1];
    let mut out = Vec::with_capacity(recs.len());
    for (_, trip, mut rec) in recs {
        if rec.status == 1 {
            occupied_seen[trip as usize] += 1;
            // Flip the second occupied record: a blip between occupied neighbours.
            if occupied_seen[trip as usize] == 2
                && !blip_done[trip as usize]
                && noise.random::<f64>() < spec.blip_rate
            {
                rec.status = 0;
                blip_done[trip as usize] = true;
            }
        }
        let u: f64 = noise.random();
        if u < spec.null_rate {
            let mut raw = rec.to_raw();
            raw.fields[noise.random_range(0..7)] = None;
            out.push(raw);
            continue;
        }
        if u < spec.null_rate + spec.out_of_bbox_rate {
            let mut raw = rec.to_raw();
            raw.fields[2] = Some(format!("{:.6}", spec.bbox.lon_min - 1.0));
            out.push(raw);
            continue;
        }
        out.push(rec.to_raw());
    }
    out
}

/// Points offset from the bounding-box centre by `(east_m, north_m)`.
pub fn offset_lonlat(bbox: &BBox, east_m: f64, north_m: f64) -> (f64, f64) {
    Projection::about(bbox).inverse([east_m, north_m])
}
