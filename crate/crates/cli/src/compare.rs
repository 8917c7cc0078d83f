//! Criteria deltas between two runs (`b − a`) over a shared frequency axis
//! and shared source positions. Resolution is also reported divided by the
//! wavelength `λ = c/f`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::run::{SourceInfo, CRITERIA_FILE};

#[derive(Debug, Deserialize)]
struct Criteria {
    speed_of_sound: f64,
    steering: String,
    gf_provenance: String,
    steering_provenance: String,
    frequencies: Vec<f64>,
    sources: Vec<SourceInfo>,
    maps: Vec<Row>,
    aggregate: Vec<Aggregate>,
}

// Non-finite values are written as JSON null, hence the options.
#[derive(Debug, Deserialize)]
struct Row {
    frequency: f64,
    source_index: usize,
    spatial_deviation: Option<f64>,
    level_error: Option<f64>,
    resolution_b: Option<f64>,
    msr: Option<f64>,
    spr: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct Aggregate {
    frequency: f64,
    spatial_deviation: Option<f64>,
    level_error: Option<f64>,
    resolution_b: Option<f64>,
    msr: Option<f64>,
    spr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub frequency: f64,
    /// `None` for the per-frequency aggregate rows.
    pub source_index: Option<usize>,
    pub d_spatial_deviation: Option<f64>,
    pub d_level_error: Option<f64>,
    pub d_resolution_b: Option<f64>,
    pub d_resolution_b_over_lambda: Option<f64>,
    pub d_msr: Option<f64>,
    pub d_spr: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub run_a: String,
    pub run_b: String,
    pub label_a: String,
    pub label_b: String,
    pub per_map: Vec<Delta>,
    pub aggregate: Vec<Delta>,
}

fn load(dir: &Path) -> Result<Criteria> {
    let path = dir.join(CRITERIA_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn same_freq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

#[allow(clippy::too_many_arguments)]
fn delta(
    frequency: f64,
    source_index: Option<usize>,
    c: f64,
    dev: (Option<f64>, Option<f64>),
    level: (Option<f64>, Option<f64>),
    b: (Option<f64>, Option<f64>),
    msr: (Option<f64>, Option<f64>),
    spr: (Option<f64>, Option<f64>),
) -> Delta {
    let db = diff(b.0, b.1);
    Delta {
        frequency,
        source_index,
        d_spatial_deviation: diff(dev.0, dev.1),
        d_level_error: diff(level.0, level.1),
        d_resolution_b: db,
        d_resolution_b_over_lambda: db.map(|d| d * frequency / c),
        d_msr: diff(msr.0, msr.1),
        d_spr: diff(spr.0, spr.1),
    }
}

pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<CompareReport> {
    let a = load(dir_a)?;
    let b = load(dir_b)?;
    if a.frequencies.len() != b.frequencies.len()
        || a.frequencies.iter().zip(&b.frequencies).any(|(x, y)| !same_freq(*x, *y))
    {
        bail!("axis mismatch: runs have different frequency axes");
    }
    let idx = |c: &Criteria| c.sources.iter().map(|s| s.index).collect::<Vec<_>>();
    if idx(&a) != idx(&b) {
        bail!("axis mismatch: runs have different source positions");
    }
    if a.maps.len() != b.maps.len() {
        bail!("axis mismatch: runs have different numbers of maps");
    }
    let c = a.speed_of_sound;
    let mut per_map = Vec::with_capacity(a.maps.len());
    for (x, y) in a.maps.iter().zip(&b.maps) {
        if x.source_index != y.source_index || !same_freq(x.frequency, y.frequency) {
            bail!("axis mismatch: map rows are not aligned");
        }
        per_map.push(delta(
            x.frequency,
            Some(x.source_index),
            c,
            (x.spatial_deviation, y.spatial_deviation),
            (x.level_error, y.level_error),
            (x.resolution_b, y.resolution_b),
            (x.msr, y.msr),
            (x.spr, y.spr),
        ));
    }
    let aggregate = a
        .aggregate
        .iter()
        .zip(&b.aggregate)
        .map(|(x, y)| {
            delta(
                x.frequency,
                None,
                c,
                (x.spatial_deviation, y.spatial_deviation),
                (x.level_error, y.level_error),
                (x.resolution_b, y.resolution_b),
                (x.msr, y.msr),
                (x.spr, y.spr),
            )
        })
        .collect();
    let label = |c: &Criteria| format!("{} steering on {} GF, {} data", c.steering, c.steering_provenance, c.gf_provenance);
    Ok(CompareReport {
        run_a: dir_a.display().to_string(),
        run_b: dir_b.display().to_string(),
        label_a: label(&a),
        label_b: label(&b),
        per_map,
        aggregate,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV table, one row per delta.
pub fn to_csv(rows: &[Delta]) -> String {
    let mut out = String::from(
        "frequency,source_index,d_spatial_deviation,d_level_error,d_resolution_b,d_resolution_b_over_lambda,d_msr,d_spr\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.frequency,
            r.source_index.map(|s| s.to_string()).unwrap_or_else(|| "all".into()),
            cell(r.d_spatial_deviation),
            cell(r.d_level_error),
            cell(r.d_resolution_b),
            cell(r.d_resolution_b_over_lambda),
            cell(r.d_msr),
            cell(r.d_spr),
        ));
    }
    out
}
