// SPDX-License-Identifier: Apache-2.0

//! `bss`: evaluate and optimise battery-swapping station layouts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input error.

mod config;
mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use bss_core::analytic::{self, EvalError};
use bss_core::bo::{write_bo_trace, BoTraceRow, Lipschitz};
use bss_core::ingest::{self, CandidateRule, GapDist, HotspotPair, IngestConfig, SynthSpec};
use bss_core::io;
use bss_core::opt::{
    self, AnalyticEvaluator, CandidateSet, Clock, Evaluator, LnsConfig, OptResult, OptTrace,
    SaConfig, SimEvaluator, StopRule,
};
use bss_core::par::Execution;
use bss_core::sim::{self, SimConfig};
use bss_core::{
    ChoiceParams, Layout, ReachLimits, Scenario, StationParams, StationTable, WaitMode,
};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "bss", version, about = "Battery-swapping station placement")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Layout file, one node id per line. Overrides `[files] layout`.
    #[arg(long, global = true)]
    layout: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate one layout.
    Evaluate,
    /// Search for the best layout.
    Optimize,
    /// GPS traces to network and demand files.
    Ingest,
    /// Write synthetic GPS traces.
    Synth,
    /// Plot one or more trace CSVs.
    Report {
        /// Trace files written by `optimize`.
        traces: Vec<PathBuf>,
    },
}

enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

type Res<T> = Result<T, Failure>;

trait InputCtx<T> {
    fn input(self) -> Res<T>;
    fn runtime(self) -> Res<T>;
}

impl<T, E: Into<anyhow::Error>> InputCtx<T> for Result<T, E> {
    fn input(self) -> Res<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn runtime(self) -> Res<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BSS_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Res<()> {
    let exec = match cli.jobs {
        Some(0) => return Err(Failure::Input(anyhow!("--jobs must be >= 1"))),
        Some(1) => Execution::Sequential,
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .runtime()?;
            #[cfg(not(feature = "parallel"))]
            log::info!("built without parallel support; ignoring --jobs {n}");
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).input()?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create {}", cli.out.display()))
        .runtime()?;
    match &cli.cmd {
        Cmd::Evaluate => evaluate(cli, &cfg, exec),
        Cmd::Optimize => optimize(cli, &cfg, exec),
        Cmd::Ingest => ingest_cmd(cli, &cfg, exec),
        Cmd::Synth => synth(cli, &cfg),
        Cmd::Report { traces } => report(cli, &cfg, traces),
    }
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot write {}", path.display()))
        .runtime()
}

fn wait_mode(s: &str) -> Res<WaitMode> {
    match s {
        "exogenous" => Ok(WaitMode::Exogenous),
        "fixed-point" => Ok(WaitMode::fixed_point()),
        other => Err(Failure::Input(anyhow!("unknown wait_mode {other:?}"))),
    }
}

fn clock(s: &str) -> Res<Clock> {
    match s {
        "wall" => Ok(Clock::Wall),
        "evals" => Ok(Clock::Evals),
        other => Err(Failure::Input(anyhow!("unknown clock {other:?}"))),
    }
}

/// Simulator settings: the sim file if given, else defaults seeded from `[model]`.
fn sim_config(cfg: &ExperimentConfig) -> Res<Option<SimConfig>> {
    let mut sc = match &cfg.files.sim {
        Some(p) => io::read_sim_config(&cfg.resolve(p)).input()?,
        None => return Ok(None),
    };
    sc.seed = cfg.seed;
    Ok(Some(sc))
}

fn load_scenario(cfg: &ExperimentConfig) -> Res<(Scenario, Option<SimConfig>)> {
    let m = &cfg.model;
    let nodes = cfg.file("nodes", &cfg.files.nodes).input()?;
    let edges = cfg.file("edges", &cfg.files.edges).input()?;
    let demands = cfg.file("demands", &cfg.files.demands).input()?;
    let net = io::read_network(&nodes, &edges).input()?;
    let demands = io::read_demands(&demands).input()?;
    let default = StationParams {
        mu: m.mu_per_hour / 3600.0,
        ll: m.ll,
        l_wait_s: m.l_wait_seconds,
    };
    let stations = match &cfg.files.stations {
        Some(p) => io::read_stations(&cfg.resolve(p), default).input()?,
        None => StationTable::uniform(default),
    };
    let simc = sim_config(cfg)?;
    let limits = match &simc {
        Some(s) => s.reach(),
        None => ReachLimits {
            d_max_m: m.d_max_km * 1000.0,
            consumption_kwh_per_m: m.consumption_kwh_per_km / 1000.0,
        },
    };
    let choice = ChoiceParams::from_km_hours(
        m.alpha_detour_per_km,
        m.alpha_guarantee,
        m.alpha_wait_per_hour,
        m.epsilon,
    );
    let sc = Scenario::new(net, demands, choice, stations, limits, m.n_stations).input()?;
    Ok((sc, simc))
}

fn layout_path(cli: &Cli, cfg: &ExperimentConfig) -> Option<PathBuf> {
    cli.layout
        .clone()
        .or_else(|| cfg.files.layout.as_ref().map(|p| cfg.resolve(p)))
}

fn sim_or_default(sc: &Scenario, simc: Option<SimConfig>, seed: u64) -> SimConfig {
    simc.unwrap_or_else(|| SimConfig {
        seed,
        d_max_m: sc.limits.d_max_m,
        consumption_kwh_per_m: sc.limits.consumption_kwh_per_m,
        ..SimConfig::default()
    })
}

fn evaluate(cli: &Cli, cfg: &ExperimentConfig, exec: Execution) -> Res<()> {
    let (sc, simc) = load_scenario(cfg)?;
    let path = layout_path(cli, cfg)
        .ok_or_else(|| Failure::Input(anyhow!("no layout given (--layout)")))?;
    let layout = io::read_layout(&path).input()?;
    layout
        .validate(&sc.network, Some(sc.n_stations))
        .with_context(|| format!("bad layout {}", path.display()))
        .input()?;
    let result = match cfg.evaluator.kind.as_str() {
        "analytic" => {
            analytic::evaluate(&sc, &layout, wait_mode(&cfg.model.wait_mode)?).runtime()?
        }
        "sim" => {
            let simc = sim_or_default(&sc, simc, cfg.seed);
            let seeds = sim::replication_seeds(cfg.seed, cfg.evaluator.replications.max(1));
            let rep = sim::replicate_with(exec, &sc, &layout, &simc, &seeds).runtime()?;
            let mut w = create(&cli.out.join("replications.csv"))?;
            (|| -> std::io::Result<()> {
                writeln!(w, "seed,eta_lost")?;
                for (s, r) in seeds.iter().zip(&rep.runs) {
                    writeln!(w, "{s},{}", r.eta_lost)?;
                }
                w.flush()
            })()
            .runtime()?;
            if rep.runs.len() > 1 {
                println!("eta_lost_std {:.4}", rep.std);
            }
            let mut first = rep
                .runs
                .into_iter()
                .next()
                .expect("at least one replication");
            first.eta_lost = rep.mean;
            first
        }
        other => return Err(Failure::Input(anyhow!("unknown evaluator {other:?}"))),
    };
    let mut w = create(&cli.out.join("eval_stations.csv"))?;
    io::write_eval_stations(&result, &mut w)
        .and_then(|_| w.flush())
        .runtime()?;
    let mut w = create(&cli.out.join("eval_summary.csv"))?;
    io::write_eval_summary(&result, &mut w)
        .and_then(|_| w.flush())
        .runtime()?;
    println!("eta_lost {:.4}", result.eta_lost);
    Ok(())
}

/// Records every finished evaluation so a failed run can still flush a trace.
struct Recorder<'a> {
    inner: &'a (dyn Evaluator + 'a),
    log: Mutex<Vec<(Layout, f64)>>,
}

impl Evaluator for Recorder<'_> {
    fn evaluate(&self, layout: &Layout) -> Result<f64, EvalError> {
        let r = self.inner.evaluate(layout);
        let v = *r.as_ref().unwrap_or(&f64::NAN);
        self.log.lock().unwrap().push((layout.clone(), v));
        r
    }
}

impl Recorder<'_> {
    fn partial_trace(&self, clock: Clock) -> OptTrace {
        let mut t = OptTrace::new(clock);
        let mut best: Option<(Layout, f64)> = None;
        for (i, (l, v)) in self.log.lock().unwrap().iter().enumerate() {
            if v.is_finite() && best.as_ref().is_none_or(|b| *v < b.1) {
                best = Some((l.clone(), *v));
            }
            match &best {
                Some((bl, bv)) => t.push(i as u64 + 1, *v, *bv, bl),
                None => t.push(i as u64 + 1, *v, f64::NAN, l),
            }
        }
        t
    }
}

fn write_trace(trace: &OptTrace, path: &Path) -> Res<()> {
    let mut w = create(path)?;
    trace.write_csv(&mut w).and_then(|_| w.flush()).runtime()
}

fn optimize(cli: &Cli, cfg: &ExperimentConfig, exec: Execution) -> Res<()> {
    let (sc, simc) = load_scenario(cfg)?;
    let o = &cfg.optimizer;
    let clock = clock(&o.clock)?;
    let stop = StopRule {
        max_evals: o.max_evals,
        max_iters: o.max_iters,
        time_budget_s: o.time_budget_s,
    };
    let cands = CandidateSet::from_network(&sc.network);
    let analytic_eval;
    let sim_eval;
    let inner: &dyn Evaluator = match cfg.evaluator.kind.as_str() {
        "analytic" => {
            analytic_eval = AnalyticEvaluator {
                scenario: &sc,
                mode: wait_mode(&cfg.model.wait_mode)?,
            };
            &analytic_eval
        }
        "sim" => {
            let simc = sim_or_default(&sc, simc, cfg.seed);
            sim_eval = SimEvaluator {
                replications: cfg.evaluator.replications.max(1),
                ..SimEvaluator::new(&sc, simc, cfg.seed)
            };
            &sim_eval
        }
        other => return Err(Failure::Input(anyhow!("unknown evaluator {other:?}"))),
    };
    let rec = Recorder {
        inner,
        log: Mutex::new(Vec::new()),
    };
    let initial = || -> Res<Layout> {
        match layout_path(cli, cfg) {
            Some(p) => {
                let l = io::read_layout(&p).input()?;
                l.validate(&sc.network, Some(sc.n_stations))
                    .with_context(|| format!("bad layout {}", p.display()))
                    .input()?;
                Ok(l)
            }
            None => {
                if sc.n_stations > cands.len() {
                    return Err(Failure::Input(anyhow!(
                        "n_stations exceeds the candidate count"
                    )));
                }
                let mut rng = bss_core::rng::stream(bss_core::rng::derive_seed(cfg.seed, &[0x1a5]));
                Ok(opt::random_layout(&cands.ids, sc.n_stations, &mut rng))
            }
        }
    };
    let mut bo_rows: Vec<BoTraceRow> = Vec::new();
    let result: Result<OptResult, opt::OptError> = match o.kind.as_str() {
        "lns-bo" => {
            let l = &cfg.lns;
            let lcfg = LnsConfig {
                k_destroy: l.k_destroy,
                k_destroy_min: l.k_destroy_min,
                n_init: l.n_init,
                m_batch: l.m_batch,
                n_sample: l.n_sample,
                lipschitz: l.lipschitz.map_or(Lipschitz::Estimated, Lipschitz::Fixed),
                stop,
                seed: cfg.seed,
                clock,
                exec,
            };
            opt::lns_bo_traced(&initial()?, &cands, &rec, &lcfg, &mut bo_rows)
        }
        "sa" => {
            let s = &cfg.sa;
            let scfg = SaConfig {
                t_init: s.t_init,
                cooling_ratio: s.cooling_ratio,
                moves_per_temp: s.moves_per_temp,
                probes: s.probes,
                stop,
                seed: cfg.seed,
                clock,
            };
            opt::simulated_annealing(&initial()?, &cands, &rec, &scfg)
        }
        "enum" => opt::enumerate_exact(
            &cands.ids,
            sc.n_stations,
            &rec,
            cfg.enumeration.cap,
            exec,
            clock,
        ),
        other => return Err(Failure::Input(anyhow!("unknown optimizer {other:?}"))),
    };
    let trace_path = cli.out.join("trace.csv");
    let res = match result {
        Ok(r) => r,
        Err(e) => {
            write_trace(&rec.partial_trace(clock), &trace_path)?;
            let input = matches!(
                e,
                opt::OptError::Config(_)
                    | opt::OptError::Layout(_)
                    | opt::OptError::TooManyLayouts { .. }
            );
            let err = anyhow!(e).context("optimizer failed; partial trace written");
            return Err(if input {
                Failure::Input(err)
            } else {
                Failure::Runtime(err)
            });
        }
    };
    write_trace(&res.trace, &trace_path)?;
    io::write_layout(&res.best, &cli.out.join("best_layout.txt")).runtime()?;
    let mut w = create(&cli.out.join("bo_trace.csv"))?;
    write_bo_trace(&mut w, &bo_rows)
        .and_then(|_| w.flush())
        .runtime()?;
    let x_label = if clock == Clock::Wall {
        "elapsed (s)"
    } else {
        "evaluations"
    };
    let pts = res
        .trace
        .rows
        .iter()
        .map(|r| (r.elapsed_s, r.best_obj))
        .collect();
    fs::write(
        cli.out.join("convergence.svg"),
        svg::convergence(&[(o.kind.clone(), pts)], x_label),
    )
    .runtime()?;
    println!("best_obj {:.4}", res.best_obj);
    println!("best_layout {}", res.best);
    println!("evals {}", res.evals);
    Ok(())
}

fn ingest_cmd(cli: &Cli, cfg: &ExperimentConfig, exec: Execution) -> Res<()> {
    let g = &cfg.ingest;
    let input = cfg.file("ingest input", &g.input).input()?;
    let raw = ingest::read_gps_csv(&input).input()?;
    let candidate_rule = match &g.pois {
        None => CandidateRule::All,
        Some(p) => CandidateRule::NearestToPoi(read_pois(&cfg.resolve(p))?),
    };
    let icfg = IngestConfig {
        clean: ingest::CleanConfig {
            bbox: g.bbox(),
            blip_window_s: g.blip_window_s,
        },
        occupied_code: g.occupied_code,
        cell_size_m: g.cell_size_m,
        min_occurrences: g.min_occurrences,
        network: ingest::NetworkConfig {
            k_clusters: g.k_clusters,
            seed: cfg.seed,
            max_gap_s: g.max_gap_s,
            candidate_rule,
        },
        ..IngestConfig::default()
    };
    let out = ingest::run_pipeline(&raw, &icfg, exec).map_err(|e| match e {
        ingest::IngestError::Config(_) | ingest::IngestError::BadK { .. } => {
            Failure::Input(e.into())
        }
        e => Failure::Runtime(e.into()),
    })?;
    io::write_network(
        &out.network,
        &cli.out.join("nodes.csv"),
        &cli.out.join("edges.csv"),
    )
    .runtime()?;
    io::write_demands(&out.demands, &cli.out.join("demands.csv")).runtime()?;
    let mut w = create(&cli.out.join("fits.csv"))?;
    ingest::write_fits(&out.fits, &mut w)
        .and_then(|_| w.flush())
        .runtime()?;
    fs::write(cli.out.join("filter_report.txt"), out.report.to_string()).runtime()?;
    print!("{}", out.report);
    Ok(())
}

fn read_pois(path: &Path) -> Res<Vec<(f64, f64)>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .input()?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec
            .with_context(|| format!("{}: bad row {}", path.display(), i + 1))
            .input()?;
        let f = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok());
        match (f(0), f(1)) {
            (Some(lon), Some(lat)) => out.push((lon, lat)),
            _ if i == 0 => {}
            _ => {
                return Err(Failure::Input(anyhow!(
                    "{}: row {} is not lon,lat",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

fn synth(cli: &Cli, cfg: &ExperimentConfig) -> Res<()> {
    let s = &cfg.synth;
    let bbox = cfg.ingest.bbox();
    if s.pairs.is_empty() {
        return Err(Failure::Input(anyhow!(
            "[synth] needs at least one [[synth.pairs]] entry"
        )));
    }
    let mut pairs = Vec::new();
    for p in &s.pairs {
        let gaps = match p.gaps.as_str() {
            "exponential" => GapDist::Exponential,
            "uniform" => GapDist::Uniform,
            other => return Err(Failure::Input(anyhow!("unknown gaps {other:?}"))),
        };
        pairs.push(HotspotPair {
            from: ingest::offset_lonlat(&bbox, p.from_east_m, p.from_north_m),
            to: ingest::offset_lonlat(&bbox, p.to_east_m, p.to_north_m),
            rate_per_hour: p.rate_per_hour,
            gaps,
        });
    }
    let spec = SynthSpec {
        pairs,
        duration_h: s.duration_h,
        scatter_m: s.scatter_m,
        bbox,
        null_rate: s.null_rate,
        out_of_bbox_rate: s.out_of_bbox_rate,
        blip_rate: s.blip_rate,
        ..SynthSpec::default()
    };
    let recs = ingest::synth_traces(&spec, cfg.seed);
    let mut w = create(&cli.out.join("gps.csv"))?;
    ingest::write_gps_csv(&recs, &mut w)
        .and_then(|_| w.flush())
        .runtime()?;
    println!("records {}", recs.len());
    Ok(())
}

fn read_trace(path: &Path) -> Res<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .input()?;
    let mut pts = Vec::new();
    for rec in rd.records() {
        let rec = rec
            .with_context(|| format!("bad trace {}", path.display()))
            .input()?;
        let num = |k: usize| -> Res<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Failure::Input(anyhow!("bad trace {}: column {k}", path.display())))
        };
        pts.push((num(0)?, num(3)?));
    }
    Ok(pts)
}

fn report(cli: &Cli, cfg: &ExperimentConfig, traces: &[PathBuf]) -> Res<()> {
    if traces.is_empty() {
        return Err(Failure::Input(anyhow!(
            "report needs at least one trace file"
        )));
    }
    let mut series = Vec::new();
    for t in traces {
        let name = t
            .parent()
            .and_then(|p| p.file_name())
            .or_else(|| t.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        series.push((name, read_trace(t)?));
    }
    fs::write(
        cli.out.join("convergence.svg"),
        svg::convergence(&series, "elapsed"),
    )
    .runtime()?;
    let mut w = create(&cli.out.join("summary.csv"))?;
    (|| -> std::io::Result<()> {
        writeln!(w, "trace,rows,final_elapsed,final_best_obj")?;
        for ((name, pts), path) in series.iter().zip(traces) {
            let (e, b) = pts.last().copied().unwrap_or((f64::NAN, f64::NAN));
            let label = if name.is_empty() {
                path.display().to_string()
            } else {
                name.clone()
            };
            writeln!(w, "{label},{},{e},{b}", pts.len())?;
        }
        w.flush()
    })()
    .runtime()?;
    if let (Some(lp), Some(_)) = (layout_path(cli, cfg), &cfg.files.nodes) {
        let nodes = cfg.file("nodes", &cfg.files.nodes).input()?;
        let edges = cfg.file("edges", &cfg.files.edges).input()?;
        let net = io::read_network(&nodes, &edges).input()?;
        let layout = io::read_layout(&lp).input()?;
        fs::write(cli.out.join("layout.svg"), svg::layout(&net, &layout)).runtime()?;
    }
    Ok(())
}
