//! Run records, their checksummed serialization, derived summaries and the
//! CSV exports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a stored
//! run reproduces every derived number bit for bit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::Pose2z;
use crate::metrics::{absolute_error, convergence_error, relative_error};
use crate::sim::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    pub e_abs_cpdaf: f64,
    pub e_rel_cpdaf: f64,
    pub e_abs_baseline: Option<f64>,
    pub e_rel_baseline: Option<f64>,
    pub e_rel_final: f64,
    /// Hypotheses weighted over all stations in this step.
    pub n_hypotheses: usize,
    /// Wall time of the detection sweep, µs; zero unless timings were requested.
    pub update_us: u64,
    /// Largest `|Σβ − 1|` over the station updates of this step.
    pub max_weight_error: f64,
    /// Station updates that fell back to the best-hypotheses cap.
    pub capped: usize,
    /// Hypotheses dropped for a singular innovation covariance.
    pub dropped: usize,
    /// Station updates skipped because every weight vanished.
    pub degenerate: usize,
    pub truth: Vec<Pose2z>,
    pub estimate: Vec<Pose2z>,
    pub baseline: Option<Vec<Pose2z>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub version: String,
    pub total_wall_time_s: f64,
}

impl RunHeader {
    pub fn new(config: ScenarioConfig, total_wall_time_s: f64) -> Self {
        RunHeader { seed: config.seed, config, version: env!("CARGO_PKG_VERSION").to_string(), total_wall_time_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub rows: Vec<StepRecord>,
    /// SHA-256 of the serialized header and rows, hex encoded.
    pub checksum: String,
}

fn digest(header: &RunHeader, rows: &[StepRecord]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(header).map_err(|e| Error::InvalidParam(e.to_string()))?);
    hasher.update(serde_json::to_vec(rows).map_err(|e| Error::InvalidParam(e.to_string()))?);
    Ok(hex::encode(hasher.finalize()))
}

impl RunLog {
    pub fn new(header: RunHeader, rows: Vec<StepRecord>) -> Self {
        let checksum = digest(&header, &rows).expect("run records always serialize");
        RunLog { header, rows, checksum }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::InvalidParam(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParam(format!("malformed run log: {e}")))
    }

    pub fn verify_checksum(&self) -> Result<()> {
        if digest(&self.header, &self.rows)? != self.checksum {
            return Err(Error::ReplayMismatch("checksum mismatch".into()));
        }
        Ok(())
    }

    pub fn final_truth(&self) -> Option<&[Pose2z]> {
        self.rows.last().map(|r| r.truth.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_robots: usize,
    pub seed: u64,
    pub steps: usize,
    pub final_e_abs: f64,
    pub final_e_rel: f64,
    pub final_e_abs_baseline: Option<f64>,
    pub final_e_rel_baseline: Option<f64>,
    /// First time at which the relative error fell below the threshold.
    pub time_to_converge: Option<f64>,
    pub convergence_threshold: f64,
    pub mean_hypotheses: f64,
    pub max_weight_error: f64,
    pub capped_updates: usize,
    pub degenerate_updates: usize,
    pub total_wall_time_s: f64,
    pub config: ScenarioConfig,
}

impl Summary {
    pub fn from_log(log: &RunLog) -> Result<Self> {
        let last = log.rows.last().ok_or_else(|| Error::InvalidParam("run log has no rows".into()))?;
        let cfg = &log.header.config;
        let detecting: Vec<&StepRecord> = log.rows.iter().filter(|r| r.n_hypotheses > 0).collect();
        let mean_hypotheses = if detecting.is_empty() {
            0.0
        } else {
            detecting.iter().map(|r| r.n_hypotheses as f64).sum::<f64>() / detecting.len() as f64
        };
        Ok(Summary {
            n_robots: cfg.n_robots,
            seed: log.header.seed,
            steps: log.rows.len() - 1,
            final_e_abs: last.e_abs_cpdaf,
            final_e_rel: last.e_rel_cpdaf,
            final_e_abs_baseline: last.e_abs_baseline,
            final_e_rel_baseline: last.e_rel_baseline,
            time_to_converge: log.rows.iter().find(|r| r.e_rel_cpdaf < cfg.convergence_threshold).map(|r| r.time_s),
            convergence_threshold: cfg.convergence_threshold,
            mean_hypotheses,
            max_weight_error: log.rows.iter().map(|r| r.max_weight_error).fold(0.0, f64::max),
            capped_updates: log.rows.iter().map(|r| r.capped).sum(),
            degenerate_updates: log.rows.iter().map(|r| r.degenerate).sum(),
            total_wall_time_s: log.header.total_wall_time_s,
            config: cfg.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParam(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const ERRORS_COLUMNS: &str =
    "step,time_s,e_abs_cpdaf,e_rel_cpdaf,e_abs_baseline,e_rel_baseline,e_rel_final,n_hypotheses,update_us";
pub const POSES_COLUMNS: &str = "step,time_s,robot,source,x,y,z,psi";
pub const TRUTH_COLUMNS: &str = "step,time_s,robot,x,y,z,psi";

fn csv_header(columns: &str) -> String {
    format!("# columns: {columns}\n{columns}\n")
}

pub fn errors_csv(log: &RunLog) -> String {
    let mut out = csv_header(ERRORS_COLUMNS);
    for r in &log.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.time_s,
            r.e_abs_cpdaf,
            r.e_rel_cpdaf,
            opt(r.e_abs_baseline),
            opt(r.e_rel_baseline),
            r.e_rel_final,
            r.n_hypotheses,
            r.update_us
        );
    }
    out
}

fn pose_fields(p: &Pose2z) -> String {
    format!("{},{},{},{}", p.t.x, p.t.y, p.t.z, p.psi.radians())
}

pub fn estimates_csv(log: &RunLog) -> String {
    let mut out = csv_header(POSES_COLUMNS);
    for r in &log.rows {
        for (i, p) in r.estimate.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},cpdaf,{}", r.step, r.time_s, i, pose_fields(p));
        }
        for (i, p) in r.baseline.iter().flatten().enumerate() {
            let _ = writeln!(out, "{},{},{},baseline,{}", r.step, r.time_s, i, pose_fields(p));
        }
    }
    out
}

pub fn truth_csv(log: &RunLog) -> String {
    let mut out = csv_header(TRUTH_COLUMNS);
    for r in &log.rows {
        for (i, p) in r.truth.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", r.step, r.time_s, i, pose_fields(p));
        }
    }
    out
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

/// Verifies a stored run: checksum, every per-step metric recomputed from the
/// stored poses, and, when given, the stored summary text.
pub fn replay(log: &RunLog, stored_summary: Option<&str>) -> Result<Summary> {
    log.verify_checksum()?;
    let final_truth = log.final_truth().ok_or_else(|| Error::InvalidParam("run log has no rows".into()))?;
    for r in &log.rows {
        let mismatch = |what: &str| Error::ReplayMismatch(format!("{what} differs at step {}", r.step));
        if !same(absolute_error(&r.estimate, &r.truth)?, r.e_abs_cpdaf) {
            return Err(mismatch("e_abs_cpdaf"));
        }
        if !same(relative_error(&r.estimate, &r.truth)?, r.e_rel_cpdaf) {
            return Err(mismatch("e_rel_cpdaf"));
        }
        if !same(convergence_error(&r.estimate, final_truth)?, r.e_rel_final) {
            return Err(mismatch("e_rel_final"));
        }
        let baseline = match &r.baseline {
            Some(b) => (Some(absolute_error(b, &r.truth)?), Some(relative_error(b, &r.truth)?)),
            None => (None, None),
        };
        let eq = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => same(x, y),
            (None, None) => true,
            _ => false,
        };
        if !eq(baseline.0, r.e_abs_baseline) || !eq(baseline.1, r.e_rel_baseline) {
            return Err(mismatch("baseline error"));
        }
    }
    let summary = Summary::from_log(log)?;
    if let Some(text) = stored_summary {
        if summary.to_json()? != text {
            return Err(Error::ReplayMismatch("summary differs from the stored summary".into()));
        }
    }
    Ok(summary)
}
