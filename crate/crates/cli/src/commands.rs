//! Command implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;

use dream_core::addrmap::{builtin_scheme, DramGeometry, MappingScheme, SchemeKind};
use dream_core::dramsim::{
    self, Controller, DreamOnlineConfig, SimConfig, SimReport,
};
use dream_core::monitor::{write_signature_csv, BitChangeMonitor, WindowConfig};
use dream_core::migration::write_relocation_csv;
use dream_core::predictor::{write_decision_csv, PredictorConfig};
use dream_core::stats::{geometric_mean, pearson};
use dream_core::trace::{self, standard_suite, MemoryRequest, TraceSpec};

use crate::config::RunConfig;

/// Resolves a scheme name: one of the builtins or a scheme-file path.
pub fn load_scheme(spec: &str, geom: &DramGeometry) -> anyhow::Result<MappingScheme> {
    let scheme = match spec {
        "baseline" => builtin_scheme(SchemeKind::Baseline, geom),
        "permutation" => builtin_scheme(SchemeKind::Permutation, geom),
        "minimalist" => builtin_scheme(SchemeKind::Minimalist, geom),
        path => MappingScheme::load(Path::new(path))
            .with_context(|| format!("loading scheme file '{path}'"))?,
    };
    let violations = scheme.validate(geom);
    if !violations.is_empty() {
        bail!(
            "scheme '{}' invalid for the configured geometry: {}",
            scheme.scheme_id,
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        );
    }
    Ok(scheme)
}

fn load_traces(paths: &[PathBuf], geom: &DramGeometry) -> anyhow::Result<Vec<MemoryRequest>> {
    let mut traces = Vec::new();
    for path in paths {
        let t = trace::load(path).with_context(|| format!("loading {}", path.display()))?;
        traces.push(t);
    }
    let merged = if traces.len() == 1 {
        traces.pop().expect("one trace")
    } else {
        trace::interleave(traces)?
    };
    for (i, req) in merged.iter().enumerate() {
        if req.address >= geom.capacity() {
            bail!(
                "request {i}: address {:#x} outside the {}-byte capacity",
                req.address,
                geom.capacity()
            );
        }
    }
    Ok(merged)
}

enum Sink {
    Dir(PathBuf),
    Stdout,
}

impl Sink {
    fn new(out: &Option<PathBuf>) -> anyhow::Result<Self> {
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                Ok(Sink::Dir(dir.clone()))
            }
            None => Ok(Sink::Stdout),
        }
    }

    fn write(&self, name: &str, emit: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
        match self {
            Sink::Dir(dir) => {
                let path = dir.join(name);
                let mut file = BufWriter::new(
                    File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                );
                emit(&mut file)?;
                file.flush()?;
                Ok(())
            }
            Sink::Stdout => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                emit(&mut lock)?;
                Ok(())
            }
        }
    }
}

pub fn profile(cfg: &RunConfig, trace_path: &Path, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let geom = cfg.geometry;
    let requests = load_traces(&[trace_path.to_path_buf()], &geom)?;
    if requests.is_empty() {
        bail!("no requests observed");
    }
    cfg.window
        .validate()
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let mut monitor = BitChangeMonitor::new(geom.address_bits(), cfg.window.counter_bits);
    let mut sigs = Vec::new();
    for req in &requests {
        monitor.observe(req.address);
        if monitor.requests_observed() == cfg.window.window_len {
            sigs.push(monitor.finalize_window()?);
        }
    }
    if monitor.requests_observed() > 0 {
        sigs.push(monitor.finalize_window()?);
    }
    let sink = Sink::new(out)?;
    sink.write("signatures.csv", |w| {
        write_signature_csv(w, &sigs)?;
        Ok(())
    })
}

fn online_config(cfg: &RunConfig, base: MappingScheme) -> DreamOnlineConfig {
    DreamOnlineConfig {
        base,
        window: cfg.window,
        predictor: cfg.predictor,
        drain_per_slot: cfg.drain_per_slot,
    }
}

/// Runs one controller spec over a merged trace.
fn run_controller(
    cfg: &RunConfig,
    sim: &SimConfig,
    requests: &[MemoryRequest],
    controller_spec: &str,
    base_scheme: &MappingScheme,
) -> anyhow::Result<(SimReport, Vec<dream_core::migration::RelocationEvent>)> {
    if let Some(fixed) = controller_spec.strip_prefix("fixed:") {
        let scheme = load_scheme(fixed, &cfg.geometry)?;
        return Ok(dramsim::run_with_events(
            requests,
            &Controller::Fixed(scheme),
            sim,
        )?);
    }
    match controller_spec {
        "dream-online" => Ok(dramsim::run_with_events(
            requests,
            &Controller::DreamOnline(online_config(cfg, base_scheme.clone())),
            sim,
        )?),
        "dream-offline" => {
            let (scheme, improvement) = dramsim::estimate_offline_scheme(
                requests,
                base_scheme,
                &cfg.geometry,
                &cfg.window,
                &cfg.predictor,
            )?;
            Ok(dramsim::run_with_events(
                requests,
                &Controller::DreamOffline(dramsim::DreamOfflineConfig {
                    scheme,
                    profile_improvement: improvement,
                }),
                sim,
            )?)
        }
        other => bail!(
            "unknown controller '{other}': expected fixed:<scheme>, dream-online or dream-offline"
        ),
    }
}

pub fn simulate(
    cfg: &RunConfig,
    trace_paths: &[PathBuf],
    controller_spec: &str,
    base_scheme_spec: &str,
    out: &Option<PathBuf>,
) -> anyhow::Result<()> {
    let base = load_scheme(base_scheme_spec, &cfg.geometry)?;
    let requests = load_traces(trace_paths, &cfg.geometry)?;
    let sim = cfg.sim_config();
    let (report, events) = run_controller(cfg, &sim, &requests, controller_spec, &base)?;

    let sink = Sink::new(out)?;
    sink.write("report.json", |w| {
        writeln!(w, "{}", report.to_json())?;
        Ok(())
    })?;
    if let Sink::Dir(_) = Sink::new(out)? {
        if !report.decisions.is_empty() {
            sink.write("decisions.csv", |w| {
                write_decision_csv(w, &report.decisions)?;
                Ok(())
            })?;
        }
        if !report.windows.is_empty() {
            sink.write("signatures.csv", |w| {
                write_signature_csv(w, &report.windows)?;
                Ok(())
            })?;
        }
        if !events.is_empty() {
            sink.write("relocations.csv", |w| {
                write_relocation_csv(w, &events)?;
                Ok(())
            })?;
        }
    }
    Ok(())
}

pub fn compare(
    cfg: &RunConfig,
    trace_paths: &[PathBuf],
    scheme_specs: &[String],
    baseline: &str,
    base_scheme_spec: &str,
    out: &Option<PathBuf>,
) -> anyhow::Result<()> {
    if trace_paths.is_empty() {
        bail!("compare needs at least one --trace");
    }
    if !scheme_specs.iter().any(|s| s == baseline) {
        bail!("baseline '{baseline}' is not in the scheme list {scheme_specs:?}");
    }
    let base = load_scheme(base_scheme_spec, &cfg.geometry)?;
    let sim = cfg.sim_config();

    // Every (workload, scheme) cell simulates independently.
    let mut jobs: Vec<(String, String)> = Vec::new();
    for path in trace_paths {
        let workload = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for scheme in scheme_specs {
            jobs.push((workload.clone(), scheme.clone()));
        }
    }
    let traces: Vec<Vec<MemoryRequest>> = trace_paths
        .iter()
        .map(|p| load_traces(std::slice::from_ref(p), &cfg.geometry))
        .collect::<anyhow::Result<_>>()?;

    let cells: Vec<anyhow::Result<(String, String, u64)>> = jobs
        .par_iter()
        .map(|(workload, scheme)| {
            let idx = trace_paths
                .iter()
                .position(|p| {
                    p.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string())
                        == *workload
                })
                .expect("workload indexed");
            let spec = if scheme.starts_with("dream-") {
                scheme.clone()
            } else {
                format!("fixed:{scheme}")
            };
            let (report, _) = run_controller(cfg, &sim, &traces[idx], &spec, &base)?;
            Ok((workload.clone(), scheme.clone(), report.total_cpu_cycles))
        })
        .collect();

    let mut rows: Vec<(String, String, u64, f64)> = Vec::new();
    for cell in cells {
        let (workload, scheme, cycles) = cell?;
        rows.push((workload, scheme, cycles, 0.0));
    }
    // Normalize each workload against its baseline-scheme cell.
    for i in 0..rows.len() {
        let (workload, _, cycles, _) = rows[i].clone();
        let base_cycles = rows
            .iter()
            .find(|(w, s, _, _)| *w == workload && s == baseline)
            .map(|(_, _, c, _)| *c)
            .context("baseline cell missing")?;
        if base_cycles == 0 {
            bail!("baseline cycles are zero for workload {workload}");
        }
        rows[i].3 = cycles as f64 / base_cycles as f64;
    }

    let sink = Sink::new(out)?;
    sink.write("compare.csv", |w| {
        writeln!(w, "workload,scheme,total_cpu_cycles,normalized_exec_time")?;
        for (workload, scheme, cycles, norm) in &rows {
            writeln!(w, "{workload},{scheme},{cycles},{norm}")?;
        }
        for scheme in scheme_specs {
            let values: Vec<f64> = rows
                .iter()
                .filter(|(_, s, _, _)| s == scheme)
                .map(|(_, _, _, n)| *n)
                .collect();
            let g = geometric_mean(&values)
                .ok_or_else(|| anyhow::anyhow!("no rows for scheme {scheme}"))?;
            writeln!(w, "GMEAN,{scheme},,{g}")?;
        }
        Ok(())
    })
}

pub fn correlate(
    cfg: &RunConfig,
    workloads: Option<usize>,
    requests_per_trace: u64,
    base_scheme_spec: &str,
    out: &Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut suite = standard_suite(requests_per_trace, cfg.seed);
    if let Some(n) = workloads {
        suite.truncate(n);
    }
    if suite.len() < 3 {
        bail!("correlate needs at least 3 workloads, got {}", suite.len());
    }
    let base = load_scheme(base_scheme_spec, &cfg.geometry)?;
    let sim = cfg.sim_config();

    let points: Vec<anyhow::Result<(String, f64, f64)>> = suite
        .par_iter()
        .map(|(name, spec)| {
            let requests = spec.generate(&cfg.geometry)?;
            let fixed = dramsim::run(&requests, &Controller::Fixed(base.clone()), &sim)?;
            let (scheme, bit_improvement) = dramsim::estimate_offline_scheme(
                &requests,
                &base,
                &cfg.geometry,
                &cfg.window,
                &cfg.predictor,
            )?;
            let offline = dramsim::run(
                &requests,
                &Controller::DreamOffline(dramsim::DreamOfflineConfig {
                    scheme,
                    profile_improvement: bit_improvement,
                }),
                &sim,
            )?;
            let perf_improvement =
                1.0 - offline.total_cpu_cycles as f64 / fixed.total_cpu_cycles as f64;
            Ok((name.clone(), bit_improvement, perf_improvement))
        })
        .collect();

    let mut resolved = Vec::with_capacity(points.len());
    for p in points {
        resolved.push(p?);
    }
    let xs: Vec<f64> = resolved.iter().map(|(_, b, _)| *b).collect();
    let ys: Vec<f64> = resolved.iter().map(|(_, _, p)| *p).collect();
    let r = pearson(&xs, &ys)
        .ok_or_else(|| anyhow::anyhow!("correlation undefined (degenerate sample)"))?;

    let sink = Sink::new(out)?;
    sink.write("correlation.json", |w| {
        let summary = serde_json::json!({
            "workloads": resolved.len(),
            "pearson_r": r,
        });
        writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    })?;
    sink.write("scatter.csv", |w| {
        writeln!(w, "workload,bit_change_improvement,performance_improvement")?;
        for (name, bit, perf) in &resolved {
            writeln!(w, "{name},{bit},{perf}")?;
        }
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
pub fn gen_trace(
    cfg: &RunConfig,
    kind: &str,
    n: u64,
    start: u64,
    stride: u64,
    hot_bit: Option<u32>,
    spec_file: Option<&Path>,
    out: &Option<PathBuf>,
) -> anyhow::Result<()> {
    let geom = cfg.geometry;
    let spec = if let Some(path) = spec_file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str::<TraceSpec>(&text)
            .with_context(|| format!("parsing trace spec {}", path.display()))?
    } else {
        match kind {
            "sequential" => TraceSpec::Sequential { start, n },
            "strided" => TraceSpec::Strided { start, stride, hot_bit, n },
            "random" => TraceSpec::Random { seed: cfg.seed, n },
            other => bail!(
                "unknown trace kind '{other}' (sequential|strided|random; use --spec for mixes)"
            ),
        }
    };
    let requests = spec.generate(&geom).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut file = BufWriter::new(File::create(path)?);
            trace::serialize(&mut file, &requests)?;
            file.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            trace::serialize(&mut lock, &requests)?;
        }
    }
    Ok(())
}

// Used by the simulate command to honor overrides without re-parsing.
pub fn apply_overrides(
    cfg: &mut RunConfig,
    window: Option<u64>,
    threshold: Option<f64>,
    consistency: Option<u32>,
    cost_model: Option<dream_core::migration::CostScenario>,
    seed: Option<u64>,
) {
    if let Some(w) = window {
        cfg.window = WindowConfig {
            window_len: w,
            ..cfg.window
        };
    }
    if let Some(t) = threshold {
        cfg.predictor = PredictorConfig {
            improvement_threshold: t,
            ..cfg.predictor
        };
    }
    if let Some(c) = consistency {
        cfg.predictor = PredictorConfig {
            consistency_windows: c,
            ..cfg.predictor
        };
    }
    if let Some(m) = cost_model {
        cfg.cost_model.scenario = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
}
