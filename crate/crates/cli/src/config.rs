// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration file (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every section is optional except where a command needs it.
//!
//! ```toml
//! seed = 7
//!
//! [files]
//! nodes = "nodes.csv"
//! edges = "edges.csv"
//! demands = "demands.csv"
//! stations = "stations.csv"   # per-station overrides of [model]
//! sim = "sim.toml"            # simulator settings; also sets d_max and consumption
//! layout = "layout.txt"       # initial layout for `optimize`
//!
//! [model]
//! n_stations = 2
//! alpha_detour_per_km = 0.04
//! alpha_guarantee = 0.8
//! alpha_wait_per_hour = 0.000333
//! epsilon = 0.3
//! d_max_km = 5.0
//! consumption_kwh_per_km = 2.0
//! mu_per_hour = 12.0
//! ll = 6
//! l_wait_seconds = 0.0
//! wait_mode = "exogenous"     # or "fixed-point"
//!
//! [evaluator]
//! kind = "analytic"           # or "sim"
//! replications = 1
//!
//! [optimizer]
//! kind = "lns-bo"             # or "sa", "enum"
//! max_evals = 200
//! max_iters = 50
//! time_budget_s = 60.0
//! clock = "wall"              # or "evals"
//!
//! [lns]
//! k_destroy = 2
//! k_destroy_min = 1           # optional; draw k uniformly from k_destroy_min..=k_destroy
//! n_init = 3
//! m_batch = 2
//! n_sample = 3
//! lipschitz = 0.5             # omit to estimate from data
//!
//! [sa]
//! t_init = 0.01               # omit to set from probe moves
//! cooling_ratio = 0.95
//! moves_per_temp = 10
//! probes = 20
//!
//! [enum]
//! cap = 100000
//!
//! [ingest]
//! input = "gps.csv"
//! pois = "pois.csv"           # optional `lon,lat` rows; default makes every node a candidate
//! cell_size_m = 1000.0
//! occupied_code = 1
//! k_clusters = 1000
//! min_occurrences = 2
//! max_gap_s = 600
//! blip_window_s = 120
//! lon_min = 120.852326
//! lon_max = 122.118227
//! lat_min = 30.691701
//! lat_max = 31.874634
//!
//! [synth]
//! duration_h = 24.0
//! scatter_m = 50.0
//! null_rate = 0.0
//! out_of_bbox_rate = 0.0
//! blip_rate = 0.0
//! [[synth.pairs]]
//! from_east_m = 0.0
//! from_north_m = 0.0
//! to_east_m = 3000.0
//! to_north_m = 0.0
//! rate_per_hour = 10.0
//! gaps = "exponential"        # or "uniform"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub files: Files,
    #[serde(default)]
    pub model: Model,
    #[serde(default)]
    pub evaluator: EvaluatorCfg,
    #[serde(default)]
    pub optimizer: OptimizerCfg,
    #[serde(default)]
    pub lns: LnsCfg,
    #[serde(default)]
    pub sa: SaCfg,
    #[serde(default, rename = "enum")]
    pub enumeration: EnumCfg,
    #[serde(default)]
    pub ingest: IngestCfg,
    #[serde(default)]
    pub synth: SynthCfg,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Files {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub demands: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub sim: Option<PathBuf>,
    pub layout: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model {
    pub n_stations: usize,
    pub alpha_detour_per_km: f64,
    pub alpha_guarantee: f64,
    pub alpha_wait_per_hour: f64,
    pub epsilon: f64,
    pub d_max_km: f64,
    pub consumption_kwh_per_km: f64,
    pub mu_per_hour: f64,
    pub ll: u32,
    pub l_wait_seconds: f64,
    pub wait_mode: String,
}

impl Default for Model {
    fn default() -> Self {
        Model {
            n_stations: 1,
            alpha_detour_per_km: 0.04,
            alpha_guarantee: 0.8,
            alpha_wait_per_hour: 0.02 / 60.0,
            epsilon: 0.3,
            d_max_km: 5.0,
            consumption_kwh_per_km: 2.0,
            mu_per_hour: 12.0,
            ll: 6,
            l_wait_seconds: 0.0,
            wait_mode: "exogenous".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluatorCfg {
    pub kind: String,
    pub replications: usize,
}

impl Default for EvaluatorCfg {
    fn default() -> Self {
        EvaluatorCfg {
            kind: "analytic".into(),
            replications: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerCfg {
    pub kind: String,
    pub max_evals: Option<u64>,
    pub max_iters: Option<usize>,
    pub time_budget_s: Option<f64>,
    pub clock: String,
}

impl Default for OptimizerCfg {
    fn default() -> Self {
        OptimizerCfg {
            kind: "lns-bo".into(),
            max_evals: None,
            max_iters: None,
            time_budget_s: None,
            clock: "wall".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LnsCfg {
    pub k_destroy: usize,
    pub k_destroy_min: Option<usize>,
    pub n_init: usize,
    pub m_batch: usize,
    pub n_sample: usize,
    pub lipschitz: Option<f64>,
}

impl Default for LnsCfg {
    fn default() -> Self {
        LnsCfg {
            k_destroy: 2,
            k_destroy_min: None,
            n_init: 3,
            m_batch: 2,
            n_sample: 3,
            lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaCfg {
    pub t_init: Option<f64>,
    pub cooling_ratio: f64,
    pub moves_per_temp: usize,
    pub probes: usize,
}

impl Default for SaCfg {
    fn default() -> Self {
        SaCfg {
            t_init: None,
            cooling_ratio: 0.95,
            moves_per_temp: 10,
            probes: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnumCfg {
    pub cap: u128,
}

impl Default for EnumCfg {
    fn default() -> Self {
        EnumCfg {
            cap: bss_core::opt::DEFAULT_ENUM_CAP,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestCfg {
    pub input: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub cell_size_m: f64,
    pub occupied_code: i64,
    pub k_clusters: usize,
    pub min_occurrences: usize,
    pub max_gap_s: i64,
    pub blip_window_s: i64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Default for IngestCfg {
    fn default() -> Self {
        let b = bss_core::ingest::BBox::default();
        IngestCfg {
            input: None,
            pois: None,
            cell_size_m: 1000.0,
            occupied_code: 1,
            k_clusters: 1000,
            min_occurrences: 2,
            max_gap_s: 600,
            blip_window_s: 120,
            lon_min: b.lon_min,
            lon_max: b.lon_max,
            lat_min: b.lat_min,
            lat_max: b.lat_max,
        }
    }
}

impl IngestCfg {
    pub fn bbox(&self) -> bss_core::ingest::BBox {
        bss_core::ingest::BBox {
            lon_min: self.lon_min,
            lon_max: self.lon_max,
            lat_min: self.lat_min,
            lat_max: self.lat_max,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairCfg {
    pub from_east_m: f64,
    pub from_north_m: f64,
    pub to_east_m: f64,
    pub to_north_m: f64,
    pub rate_per_hour: f64,
    #[serde(default = "default_gaps")]
    pub gaps: String,
}

fn default_gaps() -> String {
    "exponential".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCfg {
    pub duration_h: f64,
    pub scatter_m: f64,
    pub null_rate: f64,
    pub out_of_bbox_rate: f64,
    pub blip_rate: f64,
    pub pairs: Vec<PairCfg>,
}

impl Default for SynthCfg {
    fn default() -> Self {
        SynthCfg {
            duration_h: 24.0,
            scatter_m: 50.0,
            null_rate: 0.0,
            out_of_bbox_rate: 0.0,
            blip_rate: 0.0,
            pairs: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of a required `[files]` entry.
    pub fn file(&self, name: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        match p {
            Some(p) => Ok(self.resolve(p)),
            None => bail!("config is missing [files] {name}"),
        }
    }
}
