//! Train/evaluate runs, the leave-one-domain-out grid and the delta sweep.
//!
//! Run directories are `<out>/<label>/<holdout>/seed<seed>/` where `label` is
//! the method name (or `delta<value>` in a sweep). Each holds
//! `checkpoint.adin`, `loss.csv`, `report.csv` and `config.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adverin_core::metrics::{evaluate_case, mean, DEFAULT_THRESHOLD};
use adverin_core::segnet::SegNet;
use adverin_core::train::{train, Method, Observer, TrainConfig};
use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use crate::report::{self, CaseRow, HoldoutScores, SummaryRow, ALL};
use crate::store::{self, Dataset};

pub const CHECKPOINT: &str = "checkpoint.adin";
pub const LOSS_CSV: &str = "loss.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CONFIG_TXT: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub label: String,
    pub config: TrainConfig,
    pub scores: HoldoutScores,
    pub epoch_losses: Vec<f64>,
    /// Wall-clock seconds; logged only, never written to output files.
    pub seconds: f64,
}

pub fn run_dir(root: &Path, label: &str, holdout: u32, seed: u64) -> PathBuf {
    root.join(label).join(holdout.to_string()).join(format!("seed{seed}"))
}

struct EpochLog<'a> {
    label: &'a str,
    holdout: u32,
    seed: u64,
}

impl Observer for EpochLog<'_> {
    fn on_epoch(&mut self, epoch: usize, mean_loss: f64, lr: f64) {
        log::debug!(
            "{} holdout {} seed {}: epoch {epoch} loss {mean_loss:.5} lr {lr:.5}",
            self.label,
            self.holdout,
            self.seed
        );
    }
}

/// `key = value` lines that reproduce the run through `train --config`.
pub fn config_echo(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let a = &cfg.attack;
    let _ = writeln!(s, "method = {}", cfg.method.as_str());
    let _ = writeln!(s, "holdout = {}", cfg.holdout);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "epochs = {}", cfg.epochs);
    let _ = writeln!(s, "batch-size = {}", cfg.batch_size);
    let _ = writeln!(s, "lr = {}", cfg.lr_base);
    let _ = writeln!(s, "momentum = {}", cfg.momentum);
    let _ = writeln!(s, "delta = {}", a.delta);
    let _ = writeln!(s, "points = {}", a.n_points);
    let _ = writeln!(s, "regions = {}", a.regions_total);
    let _ = writeln!(s, "regions-sampled = {}", a.regions_sampled);
    let _ = writeln!(s, "attack-prob = {}", a.attack_prob);
    s
}

/// Metrics of `net` on every sample of the holdout domain, in dataset order.
pub fn evaluate_holdout(net: &SegNet, ds: &Dataset, holdout: u32, threshold: f64) -> Result<Vec<CaseRow>> {
    let rows = ds
        .samples
        .iter()
        .filter(|s| s.domain_id == holdout)
        .map(|s| Ok(CaseRow { sample_id: s.sample_id.clone(), metrics: evaluate_case(net, s, threshold)? }))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(anyhow!("holdout domain {holdout} has no samples"));
    }
    Ok(rows)
}

/// Trains, stores the checkpoint, and evaluates the stored network on the holdout.
pub fn train_and_evaluate(ds: &Dataset, cfg: &TrainConfig, label: &str, dir: &Path) -> Result<RunResult> {
    let start = Instant::now();
    let mut obs = EpochLog { label, holdout: cfg.holdout, seed: cfg.seed };
    let outcome = train(&ds.samples, cfg, &mut obs)
        .with_context(|| format!("training {label} holdout {} seed {}", cfg.holdout, cfg.seed))?;
    // evaluate exactly what the checkpoint stores so `eval` reproduces the report
    let net = store::as_stored(&outcome.net)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    store::save_checkpoint(&dir.join(CHECKPOINT), &net, cfg.attack.n_points, cfg.attack.delta)?;
    report::write_loss(&dir.join(LOSS_CSV), &outcome.epoch_losses)?;
    std::fs::write(dir.join(CONFIG_TXT), config_echo(cfg))?;
    let rows = evaluate_holdout(&net, ds, cfg.holdout, DEFAULT_THRESHOLD)?;
    let scores = report::write_report(&dir.join(REPORT_CSV), cfg.holdout, &rows)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!(
        "{label} holdout {} seed {}: dice {:.4} hd95 {:.3} ({seconds:.1}s)",
        cfg.holdout,
        cfg.seed,
        scores.overall_dice(),
        scores.overall_hd95()
    );
    Ok(RunResult { label: label.to_string(), config: cfg.clone(), scores, epoch_losses: outcome.epoch_losses, seconds })
}

/// A queued run: configuration, label and output directory.
#[derive(Debug, Clone)]
pub struct Job {
    pub config: TrainConfig,
    pub label: String,
    pub dir: PathBuf,
}

/// Runs `jobs` on a pool of `threads` workers (0 = one per core). Results
/// come back in job order regardless of scheduling.
pub fn run_jobs(ds: &Dataset, jobs: &[Job], threads: usize) -> Result<Vec<Result<RunResult>>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|j| train_and_evaluate(ds, &j.config, &j.label, &j.dir))
            .collect()
    }))
}

fn collect_ok(results: Vec<Result<RunResult>>) -> (Vec<RunResult>, Vec<anyhow::Error>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => failed.push(e),
        }
    }
    (ok, failed)
}

fn fail_summary(failed: Vec<anyhow::Error>, total: usize) -> anyhow::Error {
    let n = failed.len();
    let first = failed.into_iter().next().expect("at least one failure");
    first.context(format!("{n} of {total} runs failed; completed runs are kept"))
}

/// Per (label, holdout, class) seed-averaged scores, per (label, holdout)
/// class averages, and per label the unweighted mean over holdout x class cells.
pub fn summarize(results: &[RunResult], labels: &[String], holdouts: &[u32]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for label in labels {
        let mut cells_dice = Vec::new();
        let mut cells_hd = Vec::new();
        for &h in holdouts {
            let runs: Vec<&RunResult> = results.iter().filter(|r| &r.label == label && r.config.holdout == h).collect();
            if runs.is_empty() {
                continue;
            }
            let classes = runs[0].scores.class_dice.len();
            let mut dom_dice = Vec::new();
            let mut dom_hd = Vec::new();
            for c in 0..classes {
                let d = mean(&runs.iter().map(|r| r.scores.class_dice[c]).collect::<Vec<_>>());
                let hd = mean(&runs.iter().map(|r| r.scores.class_hd95[c]).collect::<Vec<_>>());
                rows.push(SummaryRow {
                    method: label.clone(),
                    holdout: h.to_string(),
                    class: c.to_string(),
                    seeds: runs.len(),
                    dice: d,
                    hd95: hd,
                });
                dom_dice.push(d);
                dom_hd.push(hd);
            }
            rows.push(SummaryRow {
                method: label.clone(),
                holdout: h.to_string(),
                class: ALL.into(),
                seeds: runs.len(),
                dice: mean(&dom_dice),
                hd95: mean(&dom_hd),
            });
            cells_dice.extend(dom_dice);
            cells_hd.extend(dom_hd);
        }
        if !cells_dice.is_empty() {
            let seeds = results
                .iter()
                .filter(|r| &r.label == label)
                .map(|r| r.config.seed)
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            rows.push(SummaryRow {
                method: label.clone(),
                holdout: ALL.into(),
                class: ALL.into(),
                seeds,
                dice: mean(&cells_dice),
                hd95: mean(&cells_hd),
            });
        }
    }
    rows
}

/// Looks up a summary cell.
pub fn summary_value<'a>(rows: &'a [SummaryRow], method: &str, holdout: &str, class: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.method == method && r.holdout == holdout && r.class == class)
}

#[derive(Debug, Clone)]
pub struct LodoOutcome {
    pub results: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

/// Every `method x holdout x seed` run, then `summary.csv` in `out`.
pub fn lodo(
    ds: &Dataset,
    base: &TrainConfig,
    methods: &[Method],
    seeds: &[u64],
    out: &Path,
    threads: usize,
) -> Result<LodoOutcome> {
    let holdouts = ds.domains();
    if holdouts.len() < 2 {
        return Err(anyhow!("leave-one-domain-out needs at least 2 domains, found {}", holdouts.len()));
    }
    let mut jobs = Vec::new();
    for &m in methods {
        for &h in &holdouts {
            for &s in seeds {
                let config = TrainConfig { method: m, holdout: h, seed: s, ..base.clone() };
                jobs.push(Job { dir: run_dir(out, m.as_str(), h, s), label: m.as_str().into(), config });
            }
        }
    }
    let total = jobs.len();
    let (results, failed) = collect_ok(run_jobs(ds, &jobs, threads)?);
    let labels: Vec<String> = methods.iter().map(|m| m.as_str().to_string()).collect();
    let summary = summarize(&results, &labels, &holdouts);
    if !failed.is_empty() {
        return Err(fail_summary(failed, total));
    }
    report::write_summary(&out.join(SUMMARY_CSV), &summary)?;
    Ok(LodoOutcome { results, summary })
}

pub fn delta_label(delta: f64) -> String {
    format!("delta{delta}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub seed: Option<u64>,
    pub dice: f64,
    pub hd95: f64,
}

/// Adverin runs on one holdout for each delta x seed; `reuse` supplies
/// already finished runs (matched on delta, holdout and seed).
pub fn sweep(
    ds: &Dataset,
    base: &TrainConfig,
    holdout: u32,
    deltas: &[f64],
    seeds: &[u64],
    out: &Path,
    threads: usize,
    reuse: &[RunResult],
) -> Result<Vec<SweepRow>> {
    let mut slots: Vec<Option<RunResult>> = Vec::new();
    let mut jobs = Vec::new();
    let mut job_slot = Vec::new();
    for &d in deltas {
        for &s in seeds {
            let mut config = TrainConfig { method: Method::Adverin, holdout, seed: s, ..base.clone() };
            config.attack.delta = d;
            let found = reuse.iter().find(|r| r.config == config).cloned();
            if found.is_none() {
                job_slot.push(slots.len());
                let label = delta_label(d);
                jobs.push(Job { dir: run_dir(out, &label, holdout, s), label, config });
            }
            slots.push(found);
        }
    }
    let total = jobs.len();
    let (done, failed) = collect_ok(run_jobs(ds, &jobs, threads)?);
    if !failed.is_empty() {
        return Err(fail_summary(failed, total));
    }
    for (slot, r) in job_slot.into_iter().zip(done) {
        slots[slot] = Some(r);
    }
    let mut rows = Vec::new();
    let mut k = 0;
    for &d in deltas {
        let mut dice = Vec::new();
        let mut hd = Vec::new();
        for &s in seeds {
            let r = slots[k].as_ref().expect("every slot filled");
            k += 1;
            rows.push(SweepRow { delta: d, seed: Some(s), dice: r.scores.overall_dice(), hd95: r.scores.overall_hd95() });
            dice.push(r.scores.overall_dice());
            hd.push(r.scores.overall_hd95());
        }
        rows.push(SweepRow { delta: d, seed: None, dice: mean(&dice), hd95: mean(&hd) });
    }
    write_sweep(&out.join(SWEEP_CSV), holdout, &rows)?;
    Ok(rows)
}

/// `holdout_domain,delta,seed,dice,hd95`; seed `mean` rows average over seeds.
pub fn write_sweep(path: &Path, holdout: u32, rows: &[SweepRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["holdout_domain", "delta", "seed", "dice", "hd95"])?;
    for r in rows {
        let seed = r.seed.map_or_else(|| report::AGGREGATE_ID.to_string(), |s| s.to_string());
        w.write_record([holdout.to_string(), r.delta.to_string(), seed, r.dice.to_string(), r.hd95.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
