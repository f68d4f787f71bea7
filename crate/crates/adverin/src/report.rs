//! CSV outputs. Floats use Rust's shortest round-trip formatting so reruns
//! are byte-identical.

use std::path::Path;

use adverin_core::metrics::{aggregate, mean, CaseMetrics};
use anyhow::{Context, Result};

pub const AGGREGATE_ID: &str = "mean";
pub const AGGREGATE_FLAG: &str = "aggregate";
pub const ALL: &str = "all";

/// One evaluated holdout sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub sample_id: String,
    pub metrics: CaseMetrics,
}

/// Per-class mean Dice and HD95 plus their class-averaged overall values.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutScores {
    pub class_dice: Vec<f64>,
    pub class_hd95: Vec<f64>,
}

impl HoldoutScores {
    pub fn from_cases(rows: &[CaseRow]) -> Self {
        let cases: Vec<CaseMetrics> = rows.iter().map(|r| r.metrics.clone()).collect();
        let agg = aggregate(&cases);
        Self {
            class_dice: agg.iter().map(|a| a.dice()).collect(),
            class_hd95: agg.iter().map(|a| a.hd95()).collect(),
        }
    }

    pub fn overall_dice(&self) -> f64 {
        mean(&self.class_dice)
    }

    pub fn overall_hd95(&self) -> f64 {
        mean(&self.class_hd95)
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

/// `holdout_domain,sample_id,class,dice,hd95,flag`: one row per
/// (sample, class), then one aggregate row per class and an overall row.
pub fn write_report(path: &Path, holdout: u32, rows: &[CaseRow]) -> Result<HoldoutScores> {
    let mut w = writer(path)?;
    w.write_record(["holdout_domain", "sample_id", "class", "dice", "hd95", "flag"])?;
    let h = holdout.to_string();
    for row in rows {
        for (c, m) in row.metrics.per_class.iter().enumerate() {
            w.write_record([
                h.as_str(),
                row.sample_id.as_str(),
                &c.to_string(),
                &m.dice.to_string(),
                &m.hd95.to_string(),
                m.flag.as_str(),
            ])?;
        }
    }
    let scores = HoldoutScores::from_cases(rows);
    for (c, (d, hd)) in scores.class_dice.iter().zip(&scores.class_hd95).enumerate() {
        w.write_record([h.as_str(), AGGREGATE_ID, &c.to_string(), &d.to_string(), &hd.to_string(), AGGREGATE_FLAG])?;
    }
    w.write_record([
        h.as_str(),
        AGGREGATE_ID,
        ALL,
        &scores.overall_dice().to_string(),
        &scores.overall_hd95().to_string(),
        AGGREGATE_FLAG,
    ])?;
    w.flush()?;
    Ok(scores)
}

/// `epoch,mean_loss`.
pub fn write_loss(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "mean_loss"])?;
    for (e, l) in losses.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A scored cell of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub holdout: String,
    pub class: String,
    pub seeds: usize,
    pub dice: f64,
    pub hd95: f64,
}

/// `method,holdout_domain,class,seeds,dice,hd95`.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "holdout_domain", "class", "seeds", "dice", "hd95"])?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            r.holdout.as_str(),
            r.class.as_str(),
            &r.seeds.to_string(),
            &r.dice.to_string(),
            &r.hd95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the overall aggregate Dice back from a `report.csv`.
pub fn read_report_overall(path: &Path) -> Result<f64> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for rec in r.records() {
        let rec = rec?;
        if &rec[1] == AGGREGATE_ID && &rec[2] == ALL {
            return Ok(rec[3].parse()?);
        }
    }
    anyhow::bail!("{}: no overall row", path.display())
}
