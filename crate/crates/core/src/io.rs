// SPDX-License-Identifier: Apache-2.0

//! Plain-text file formats.
//!
//! | file | header |
//! |---|---|
//! | nodes | `node_id,x_m,y_m,is_candidate` |
//! | edges | `u,v,length_m` |
//! | demands | `origin,dest,rate_per_hour,battery_pmf` with `level:prob;level:prob` |
//! | stations | `node_id,mu_per_hour,ll,l_wait_seconds` |
//! | layout | one node id per line |
//! | sim config | TOML, see [`SimConfigFile`] |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{EvalResult, Layout, StationParams, StationTable};
use crate::demand::PathDemand;
use crate::network::{Edge, NetworkError, Node, NodeId, RoadNetwork};
use crate::sim::{SimConfig, SimConfigFile, SimError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("network files {nodes} / {edges}: {source}")]
    Network {
        nodes: PathBuf,
        edges: PathBuf,
        source: NetworkError,
    },
}

impl IoError {
    pub fn is_not_found(&self) -> bool {
        match self {
            IoError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            IoError::Csv { source, .. } => {
                matches!(source.kind(), csv::ErrorKind::Io(e) if e.kind() == std::io::ErrorKind::NotFound)
            }
            _ => false,
        }
    }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    u: NodeId,
    v: NodeId,
    length_m: f64,
}

pub fn read_nodes(path: &Path) -> Result<Vec<Node>, IoError> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        let bad = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let id = rec[0]
            .parse()
            .map_err(|_| bad(format!("bad node_id `{}`", &rec[0])))?;
        let x_m = rec[1]
            .parse()
            .map_err(|_| bad(format!("bad x_m `{}`", &rec[1])))?;
        let y_m = rec[2]
            .parse()
            .map_err(|_| bad(format!("bad y_m `{}`", &rec[2])))?;
        let is_candidate =
            parse_bool(&rec[3]).ok_or_else(|| bad(format!("bad is_candidate `{}`", &rec[3])))?;
        out.push(Node {
            id,
            x_m,
            y_m,
            is_candidate,
        });
    }
    Ok(out)
}

pub fn read_edges(path: &Path) -> Result<Vec<Edge>, IoError> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: EdgeRow = row.map_err(csv_err(path))?;
        out.push(Edge {
            u: r.u,
            v: r.v,
            length_m: r.length_m,
        });
    }
    Ok(out)
}

pub fn read_network(nodes: &Path, edges: &Path) -> Result<RoadNetwork, IoError> {
    let n = read_nodes(nodes)?;
    let e = read_edges(edges)?;
    RoadNetwork::new(n, e).map_err(|source| IoError::Network {
        nodes: nodes.to_path_buf(),
        edges: edges.to_path_buf(),
        source,
    })
}

pub fn write_network(net: &RoadNetwork, nodes: &Path, edges: &Path) -> Result<(), IoError> {
    let mut w = create(nodes)?;
    let wr = |w: &mut BufWriter<File>, s: String| writeln!(w, "{s}").map_err(io_err(nodes));
    wr(&mut w, "node_id,x_m,y_m,is_candidate".into())?;
    for n in net.nodes() {
        wr(
            &mut w,
            format!("{},{},{},{}", n.id, n.x_m, n.y_m, n.is_candidate as u8),
        )?;
    }
    w.flush().map_err(io_err(nodes))?;
    let mut w = create(edges)?;
    writeln!(w, "u,v,length_m").map_err(io_err(edges))?;
    for e in net.edges() {
        writeln!(w, "{},{},{}", e.u, e.v, e.length_m).map_err(io_err(edges))?;
    }
    w.flush().map_err(io_err(edges))
}

/// Parses `level:prob;level:prob`.
pub fn parse_pmf(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (l, p) = t
                .split_once(':')
                .ok_or_else(|| format!("`{t}` is not level:prob"))?;
            let l: f64 = l.trim().parse().map_err(|_| format!("bad level `{l}`"))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| format!("bad probability `{p}`"))?;
            Ok((l, p))
        })
        .collect()
}

pub fn format_pmf(pmf: &[(f64, f64)]) -> String {
    pmf.iter()
        .map(|(l, p)| format!("{l}:{p}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandRow {
    origin: NodeId,
    dest: NodeId,
    rate_per_hour: f64,
    battery_pmf: String,
}

pub fn read_demands(path: &Path) -> Result<Vec<PathDemand>, IoError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        let bad = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let row: DemandRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| bad(e.to_string()))?;
        let pmf = parse_pmf(&row.battery_pmf).map_err(bad)?;
        let d = PathDemand::new(row.origin, row.dest, row.rate_per_hour / 3600.0, pmf)
            .map_err(|e| bad(e.to_string()))?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_demands(demands: &[PathDemand], path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "origin,dest,rate_per_hour,battery_pmf").map_err(io_err(path))?;
    for d in demands {
        writeln!(
            w,
            "{},{},{},{}",
            d.origin,
            d.dest,
            d.rate_per_hour(),
            format_pmf(d.battery_pmf())
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Deserialize)]
struct StationRow {
    node_id: NodeId,
    mu_per_hour: f64,
    ll: u32,
    l_wait_seconds: f64,
}

/// Reads per-station overrides on top of `default`.
pub fn read_stations(path: &Path, default: StationParams) -> Result<StationTable, IoError> {
    let mut rdr = csv_reader(path)?;
    let mut table = StationTable::uniform(default);
    for row in rdr.deserialize() {
        let r: StationRow = row.map_err(csv_err(path))?;
        let p = StationParams {
            mu: r.mu_per_hour / 3600.0,
            ll: r.ll,
            l_wait_s: r.l_wait_seconds,
        };
        p.validate().map_err(|msg| IoError::Invalid {
            path: path.to_path_buf(),
            msg: format!("node {}: {msg}", r.node_id),
        })?;
        table.overrides.insert(r.node_id, p);
    }
    Ok(table)
}

pub fn write_stations(table: &StationTable, ids: &[NodeId], path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "node_id,mu_per_hour,ll,l_wait_seconds").map_err(io_err(path))?;
    for &id in ids {
        let p = table.get(id);
        writeln!(w, "{},{},{},{}", id, p.mu * 3600.0, p.ll, p.l_wait_s).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// One node id per line; blank lines and `#` comments are ignored.
pub fn read_layout(path: &Path) -> Result<Layout, IoError> {
    let rdr = BufReader::new(open(path)?);
    let mut ids = Vec::new();
    for (i, line) in rdr.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = line.split('#').next().unwrap().trim();
        if t.is_empty() {
            continue;
        }
        let id: NodeId = t.parse().map_err(|_| IoError::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: format!("bad node id `{t}`"),
        })?;
        ids.push(id);
    }
    let layout = Layout::new(ids.iter().copied());
    if layout.len() != ids.len() {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            msg: "repeated node id".into(),
        });
    }
    Ok(layout)
}

pub fn write_layout(layout: &Layout, path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    for id in layout.iter() {
        writeln!(w, "{id}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig, String> {
    let f: SimConfigFile = toml::from_str(text).map_err(|e| e.to_string())?;
    f.into_config().map_err(|e: SimError| e.to_string())
}

pub fn read_sim_config(path: &Path) -> Result<SimConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_sim_config(&text).map_err(|msg| IoError::Invalid {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_sim_config(cfg: &SimConfig, path: &Path) -> Result<(), IoError> {
    let text = toml::to_string(&SimConfigFile::from_config(cfg)).expect("plain struct serializes");
    std::fs::write(path, text).map_err(io_err(path))
}

/// Per-station rows followed by a `summary` row.
pub fn write_eval_stations<W: Write>(r: &EvalResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "node_id,lambda_per_hour,rho,type1_per_hour,wait_s")?;
    for (id, s) in &r.per_station {
        writeln!(
            w,
            "{},{},{},{},{}",
            id,
            s.lambda * 3600.0,
            s.rho,
            s.lost * 3600.0,
            s.wait_s
        )?;
    }
    let lambda: f64 = r.per_station.values().map(|s| s.lambda).sum();
    writeln!(w, "summary,{},,{},", lambda * 3600.0, r.type1_rate * 3600.0)
}

pub fn write_eval_summary<W: Write>(r: &EvalResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "eta_lost,type1_per_hour,type2_per_hour,total_per_hour,generated,served,type1,type2,in_flight")?;
    let c = r.sim.map(|c| {
        format!(
            "{},{},{},{},{}",
            c.generated, c.served, c.type1, c.type2, c.in_flight
        )
    });
    writeln!(
        w,
        "{},{},{},{},{}",
        r.eta_lost,
        r.type1_rate * 3600.0,
        r.type2_rate * 3600.0,
        r.total_rate * 3600.0,
        c.unwrap_or_else(|| ",,,,".into())
    )
}
