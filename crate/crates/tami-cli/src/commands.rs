//! Subcommand implementations. Every command writes machine-readable
//! outputs (JSON / JSON-lines / CSV) into its output directory; wall-clock
//! measurements go to a separate timing file so the primary outputs are
//! byte-reproducible for a fixed config and seed.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use tami_core::edgebank::{test_span_window, EdgeBank, EdgeBankVariant};
use tami_core::error::{Error, Result};
use tami_core::eval::{evaluate, EvalMode, EvalOptions, EvalReport, GroupStat, NegStrategy};
use tami_core::events::{chronological_split, NodeId, Split, TemporalGraph};
use tami_core::gradcheck;
use tami_core::io::{load_events, write_events, CsvSchema};
use tami_core::model::{train, TamiModel, TrainLog};
use tami_core::stats::{
    fisher_skewness, fisher_skewness_log1p, verify_log_skewness_reduction_with, ParetoParams,
    SkewnessReport, Verdict,
};
use tami_core::synth::{synth_pareto_graph, SynthSpec};

use crate::config::RunConfig;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_group_csv(path: &Path, groups: &[GroupStat]) -> Result<()> {
    let mut out = String::from("label,count,ap\n");
    for g in groups {
        let ap = g.ap.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", g.label, g.count, ap);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_graph(cfg: &RunConfig) -> Result<TemporalGraph> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset: set [data].path in the config".into()))?;
    let schema = CsvSchema { densify: cfg.data.densify, ..CsvSchema::canonical() };
    let mut g = load_events(path, &schema)?;
    // A nodes.csv sidecar next to the events (or an explicit path) carries
    // per-node features, which the event CSV cannot.
    let sidecar = cfg
        .data
        .node_features
        .clone()
        .or_else(|| {
            let p = path.with_file_name("nodes.csv");
            p.exists().then_some(p)
        });
    if let Some(nf_path) = sidecar {
        let nf = tami_core::io::load_node_features(&nf_path)?;
        if nf.len() > g.num_nodes() {
            g.expand_num_nodes(nf.len())?;
        }
        g.attach_node_features(nf)?;
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<()> {
    let g = synth_pareto_graph(spec)?;
    std::fs::create_dir_all(out_dir)?;
    write_events(&g, &out_dir.join("events.csv"))?;
    if g.node_features().is_some() {
        tami_core::io::write_node_features(&g, &out_dir.join("nodes.csv"))?;
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        spec: &'a SynthSpec,
        events: usize,
        nodes: usize,
        horizon: f64,
    }
    write_json(
        &out_dir.join("synth_manifest.json"),
        &Manifest { spec, events: g.len(), nodes: g.num_nodes(), horizon: g.horizon() },
    )?;
    println!(
        "wrote {} events over {} nodes to {}",
        g.len(),
        g.num_nodes(),
        out_dir.join("events.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub events: usize,
    pub nodes: usize,
    pub self_loops: usize,
    /// Skewness of pooled per-pair interaction intervals.
    pub interval_skewness: SkewnessReport,
    /// Skewness of test-time temporal differences, raw and log-rescaled:
    /// for every test event, the differences to the `m` most recent
    /// interactions of both endpoints.
    pub dt_skewness_original: f64,
    pub dt_skewness_log: f64,
    pub dt_samples: usize,
    pub dt_m: usize,
}

pub fn cmd_analyze(
    g: &TemporalGraph,
    split_spec: tami_core::events::SplitSpec,
    m: usize,
    out_dir: &Path,
) -> Result<AnalyzeReport> {
    let intervals = g.interaction_intervals();
    let interval_skewness = fisher_skewness(&intervals)?;

    let split = chronological_split(g, split_spec)?;
    let mut dts = Vec::new();
    for e in &g.events()[split.test.clone()] {
        for node in [e.src, e.dst] {
            for nb in g.recent_neighbors(node, e.t, m)? {
                dts.push(e.t - nb.t);
            }
        }
    }
    let dt_skewness_original = fisher_skewness(&dts)?.skewness;
    let dt_skewness_log = fisher_skewness_log1p(&dts)?.skewness;

    std::fs::create_dir_all(out_dir)?;
    let report = AnalyzeReport {
        events: g.len(),
        nodes: g.num_nodes(),
        self_loops: g.self_loop_count(),
        interval_skewness,
        dt_skewness_original,
        dt_skewness_log,
        dt_samples: dts.len(),
        dt_m: m,
    };
    write_json(&out_dir.join("analysis.json"), &report)?;
    write_interval_histogram(&intervals, &out_dir.join("interval_histogram.csv"))?;
    println!(
        "interval skewness {:.4}; dt skewness raw {:.4} -> log {:.4} ({} samples)",
        report.interval_skewness.skewness,
        report.dt_skewness_original,
        report.dt_skewness_log,
        report.dt_samples
    );
    Ok(report)
}

/// Log-spaced interval histogram for external plotting.
fn write_interval_histogram(intervals: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let positive: Vec<f64> = intervals.iter().copied().filter(|&x| x > 0.0).collect();
    if !positive.is_empty() {
        let lo = positive.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = positive.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bins = 50usize;
        let (llo, lhi) = (lo.ln(), (hi * (1.0 + 1e-12)).ln());
        let mut counts = vec![0usize; bins];
        for &x in &positive {
            let frac = (x.ln() - llo) / (lhi - llo).max(1e-300);
            let b = ((frac * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let b_lo = (llo + (lhi - llo) * i as f64 / bins as f64).exp();
            let b_hi = (llo + (lhi - llo) * (i + 1) as f64 / bins as f64).exp();
            let _ = writeln!(out, "{b_lo},{b_hi},{c}");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-prop1 / gradcheck
// ---------------------------------------------------------------------------

pub struct VerifyParams {
    pub shape: f64,
    pub scale: f64,
    pub n: usize,
    pub seed: u64,
    pub raw_rel_tol: f64,
    pub log_abs_tol: f64,
}

pub fn cmd_verify_skewness(p: &VerifyParams, out_dir: &Path) -> Result<()> {
    let params = ParetoParams::new(p.shape, p.scale)?;
    let report =
        verify_log_skewness_reduction_with(params, p.n, p.seed, p.raw_rel_tol, p.log_abs_tol)?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("skewness_verification.json"), &report)?;
    println!(
        "shape {}: raw skewness {:.4} (closed form {:.4}), log skewness {:.4} (expected 2)",
        report.shape, report.raw_skewness, report.expected_raw, report.log_skewness
    );
    match report.verdict {
        Verdict::Pass => {
            println!("PASS");
            Ok(())
        }
        Verdict::Unstable => {
            println!("UNSTABLE: {}", report.warning.unwrap_or_default());
            Ok(())
        }
        Verdict::Fail => Err(Error::Verification(format!(
            "raw relative error {:.4} (tol {}), log absolute error {:.4} (tol {})",
            report.raw_rel_err, p.raw_rel_tol, report.log_abs_err, p.log_abs_tol
        ))),
    }
}

pub fn cmd_gradcheck(seed: u64, out_dir: &Path) -> Result<()> {
    let report = gradcheck::run_full_suite(seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("gradcheck.json"), &report)?;
    for c in &report.checks {
        println!(
            "{} {} (max rel err {:.3e}, tol {:.0e}, {} cases)",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_err,
            c.tolerance,
            c.cases
        );
    }
    if report.all_pass {
        Ok(())
    } else {
        Err(Error::Verification("gradient checks failed".into()))
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrainManifest<'a> {
    config_hash: u64,
    run_config: &'a RunConfig,
    best_epoch: usize,
    best_val_ap: f64,
    stopped_early: bool,
    epochs_run: usize,
    masked_nodes: &'a [NodeId],
    train_seen: &'a [NodeId],
}

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let g = load_graph(cfg)?;
    let split = chronological_split(&g, cfg.split_spec()?)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let mut model = TamiModel::for_graph(cfg.model_config()?, &g)?;
    let tcfg = cfg.train_config()?;

    let started = Instant::now();
    let log = train(&mut model, &g, &split, &tcfg)?;
    let seconds = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(out_dir)?;
    let ck = model.checkpoint()?;
    write_json(&out_dir.join("checkpoint.json"), &ck)?;
    std::fs::write(out_dir.join("memory.lha"), model.memory.snapshot_bytes())?;
    write_train_log(&log, &out_dir.join("train_log.jsonl"))?;
    write_json(
        &out_dir.join("manifest.json"),
        &TrainManifest {
            config_hash: ck.config_hash,
            run_config: cfg,
            best_epoch: log.best_epoch,
            best_val_ap: log.best_val_ap,
            stopped_early: log.stopped_early,
            epochs_run: log.epochs.len(),
            masked_nodes: &log.masked_nodes,
            train_seen: &log.train_seen,
        },
    )?;
    // Wall-clock goes to its own file: primary outputs stay reproducible.
    std::fs::write(
        out_dir.join("timing.json"),
        format!("{{\"train_seconds\": {seconds}}}\n"),
    )?;
    println!(
        "best val AP {:.4} at epoch {} ({} epochs run); outputs in {}",
        log.best_val_ap,
        log.best_epoch,
        log.epochs.len(),
        out_dir.display()
    );
    Ok(())
}

fn write_train_log(log: &TrainLog, path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in &log.epochs {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / buckets
// ---------------------------------------------------------------------------

pub struct EvalFlags {
    pub strategy: NegStrategy,
    pub cold_start: bool,
    pub inductive: bool,
    pub appearance_m: usize,
    /// Evaluate a trainless edge-memorization baseline instead of a
    /// checkpoint.
    pub edgebank: Option<String>,
    pub edgebank_threshold: usize,
}

#[derive(Serialize)]
struct EvalManifest<'a> {
    strategy: &'a NegStrategy,
    cold_start: bool,
    mode: &'a str,
    model: &'a str,
    report: &'a EvalReport,
}

fn parse_edgebank(
    name: &str,
    threshold: usize,
    g: &TemporalGraph,
    split: &Split,
) -> Result<EdgeBankVariant> {
    Ok(match name {
        "infinity" => EdgeBankVariant::Infinity,
        "tw-ts" => EdgeBankVariant::TimeWindowFixed { window: test_span_window(g, split) },
        "tw-re" => EdgeBankVariant::TimeWindowRepeat,
        "th" => EdgeBankVariant::CountThreshold { threshold },
        other => {
            return Err(Error::Config(format!(
                "unknown edge-memorization variant {other:?} (expected infinity|tw-ts|tw-re|th)"
            )))
        }
    })
}

pub fn run_eval(
    cfg: &RunConfig,
    model_dir: Option<&Path>,
    flags: &EvalFlags,
) -> Result<EvalReport> {
    let g = load_graph(cfg)?;
    let split = chronological_split(&g, cfg.split_spec()?)?;

    let mut opts = EvalOptions::transductive(flags.strategy);
    opts.appearance_m = flags.appearance_m;
    if flags.inductive {
        opts.mode = EvalMode::InductiveNodes;
    }

    if let Some(variant) = &flags.edgebank {
        let variant = parse_edgebank(variant, flags.edgebank_threshold, &g, &split)?;
        let mut bank = EdgeBank::new(variant);
        if !flags.cold_start {
            bank.observe_range(&g, 0..split.test.start);
        }
        if flags.inductive {
            opts.train_seen = Some(seen_in_range(&g, &split));
        }
        return evaluate(&mut bank, &g, &split, &opts);
    }

    let dir = model_dir
        .ok_or_else(|| Error::Config("evaluation needs --model-dir with a checkpoint".into()))?;
    let ck_text = std::fs::read_to_string(dir.join("checkpoint.json"))
        .map_err(|e| Error::Data(format!("cannot read checkpoint: {e}")))?;
    let ck: tami_core::model::Checkpoint = serde_json::from_str(&ck_text)?;
    let mut model = TamiModel::from_checkpoint(ck)?;
    if !flags.cold_start {
        let mem_path = dir.join("memory.lha");
        if mem_path.exists() {
            model.memory.restore_bytes(&std::fs::read(mem_path)?)?;
        }
    }
    if flags.inductive {
        opts.train_seen = Some(train_seen_from_manifest(dir, &g, &split)?);
    }
    evaluate(&mut model, &g, &split, &opts)
}

fn seen_in_range(g: &TemporalGraph, split: &Split) -> HashSet<NodeId> {
    let mut seen = HashSet::new();
    for e in &g.events()[split.train.clone()] {
        seen.insert(e.src);
        seen.insert(e.dst);
    }
    seen
}

/// Train-seen nodes recorded by the training run, falling back to the raw
/// train range when no manifest is available.
fn train_seen_from_manifest(dir: &Path, g: &TemporalGraph, split: &Split) -> Result<HashSet<NodeId>> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(seen_in_range(g, split));
    }
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    match value.get("train_seen").and_then(|v| v.as_array()) {
        Some(arr) => Ok(arr
            .iter()
            .filter_map(|v| v.as_u64().map(|x| x as NodeId))
            .collect()),
        None => Ok(seen_in_range(g, split)),
    }
}

pub fn cmd_eval(
    cfg: &RunConfig,
    model_dir: Option<&Path>,
    flags: &EvalFlags,
    out_dir: &Path,
) -> Result<()> {
    let report = run_eval(cfg, model_dir, flags)?;
    std::fs::create_dir_all(out_dir)?;
    let mode = if flags.inductive { "inductive_nodes" } else { "transductive" };
    let model_name = flags.edgebank.clone().unwrap_or_else(|| "checkpoint".into());
    write_json(
        &out_dir.join("report.json"),
        &EvalManifest {
            strategy: &flags.strategy,
            cold_start: flags.cold_start,
            mode,
            model: &model_name,
            report: &report,
        },
    )?;
    println!(
        "AP {:.4}  MRR {:.4}  ({} positives, {} negatives each, {} fallbacks)",
        report.ap,
        report.mrr,
        report.positives,
        report.negatives_per_positive,
        report.sampler_fallbacks
    );
    Ok(())
}

pub fn cmd_buckets(
    cfg: &RunConfig,
    model_dir: Option<&Path>,
    flags: &EvalFlags,
    out_dir: &Path,
) -> Result<()> {
    let report = run_eval(cfg, model_dir, flags)?;
    std::fs::create_dir_all(out_dir)?;
    write_group_csv(&out_dir.join("interval_buckets.csv"), &report.interval_buckets)?;
    write_group_csv(&out_dir.join("appearance_index.csv"), &report.appearance_index)?;
    write_group_csv(&out_dir.join("eim_groups.csv"), &report.eim_groups)?;
    write_json(&out_dir.join("report.json"), &report)?;
    println!("bucket tables written to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gamma-sweep
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct SweepEntry {
    pub gamma: f64,
    pub best_val_ap: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Serialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub best_gamma: f64,
    pub best_val_ap: f64,
}

pub const DEFAULT_GAMMA_GRID: [f64; 7] = [0.0001, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

pub fn cmd_gamma_sweep(cfg: &RunConfig, grid: &[f64], out_dir: &Path) -> Result<()> {
    let g = load_graph(cfg)?;
    let split = chronological_split(&g, cfg.split_spec()?)?;
    let tcfg = cfg.train_config()?;

    let mut entries = Vec::new();
    let mut best: Option<(f64, TamiModel)> = None;
    for &gamma in grid {
        let mut sweep_cfg = cfg.clone();
        sweep_cfg.lha.gamma = gamma;
        let mut model = TamiModel::for_graph(sweep_cfg.model_config()?, &g)?;
        let log = train(&mut model, &g, &split, &tcfg)?;
        println!("gamma {gamma}: best val AP {:.4} at epoch {}", log.best_val_ap, log.best_epoch);
        entries.push(SweepEntry {
            gamma,
            best_val_ap: log.best_val_ap,
            best_epoch: log.best_epoch,
            epochs_run: log.epochs.len(),
        });
        if best.as_ref().map(|(ap, _)| log.best_val_ap > *ap).unwrap_or(true) {
            best = Some((log.best_val_ap, model));
        }
    }
    let (best_ap, best_model) = best.ok_or_else(|| Error::Config("empty gamma grid".into()))?;
    let best_gamma = entries
        .iter()
        .max_by(|a, b| a.best_val_ap.total_cmp(&b.best_val_ap))
        .map(|e| e.gamma)
        .unwrap();

    std::fs::create_dir_all(out_dir)?;
    write_json(
        &out_dir.join("gamma_sweep.json"),
        &SweepReport { entries, best_gamma, best_val_ap: best_ap },
    )?;
    write_json(&out_dir.join("checkpoint.json"), &best_model.checkpoint()?)?;
    std::fs::write(out_dir.join("memory.lha"), best_model.memory.snapshot_bytes())?;
    println!("best gamma {best_gamma} (val AP {best_ap:.4}); outputs in {}", out_dir.display());
    Ok(())
}
