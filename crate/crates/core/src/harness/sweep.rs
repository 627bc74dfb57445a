use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::output::{format_f64, write_csv, write_json};
use super::pipeline::{run, ExperimentReport, RunOutput};
use crate::error::{GeomError, Result};
use crate::estimates::{fit_power_law, PowerFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub delta: f64,
    pub epsilon: f64,
    pub net_points: Option<usize>,
    pub distortion: Option<f64>,
    pub d_lip: Option<f64>,
    pub max_differential_defect: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub points: Vec<TrendPoint>,
    /// Power-law fit of `d_Lip` against `delta`.
    pub fit: Option<PowerFit>,
    /// `d_Lip` strictly decreases as `delta` decreases.
    pub strictly_decreasing: bool,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub summary: SweepReport,
    pub runs: Vec<RunOutput>,
}

fn point(r: &ExperimentReport) -> TrendPoint {
    TrendPoint {
        delta: r.delta,
        epsilon: r.epsilon,
        net_points: r.net.as_ref().map(|n| n.points),
        distortion: r.correspondence.as_ref().map(|c| c.distortion),
        d_lip: r.d_lip(),
        max_differential_defect: r.lipschitz.as_ref().map(|l| l.max_differential_defect),
        passed: r.passed,
    }
}

/// Runs the configuration at every sweep delta (subdirectory `delta-<value>`
/// of `out`) and writes `trend.csv` and `sweep.json`.
pub fn run_sweep(config: &ExperimentConfig, out: Option<&Path>) -> Result<SweepOutput> {
    config.validate()?;
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| GeomError::InvalidParameter("config has no sweep section".into()))?;
    let mut runs = Vec::new();
    for &delta in &spec.deltas {
        let c = config.at_delta(delta);
        let dir = out.map(|o| o.join(format!("delta-{delta}")));
        runs.push(run(&c, dir.as_deref())?);
    }
    let mut points: Vec<TrendPoint> = runs.iter().map(|r| point(&r.report)).collect();
    points.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    let measured: Vec<(f64, f64)> = points.iter().filter_map(|p| p.d_lip.map(|d| (p.delta, d))).collect();
    let complete = measured.len() == points.len();
    let strictly_decreasing = complete && measured.windows(2).all(|w| w[1].1 < w[0].1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = measured.iter().copied().unzip();
    let fit = if complete { fit_power_law(&xs, &ys) } else { None };
    let summary = SweepReport {
        name: config.name.clone(),
        points,
        fit,
        strictly_decreasing,
    };
    if let Some(dir) = out {
        let io = |e: std::io::Error| GeomError::InvalidParameter(format!("writing {}: {e}", dir.display()));
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        let rows: Vec<Vec<String>> = summary
            .points
            .iter()
            .map(|p| {
                vec![
                    format_f64(p.delta),
                    format_f64(p.epsilon),
                    p.net_points.map(|n| n.to_string()).unwrap_or_default(),
                    opt(p.distortion),
                    opt(p.d_lip),
                    opt(p.max_differential_defect),
                    p.passed.to_string(),
                ]
            })
            .collect();
        let header = [
            "delta",
            "epsilon",
            "net_points",
            "distortion",
            "d_lip",
            "max_differential_defect",
            "passed",
        ];
        write_csv(&dir.join("trend.csv"), &header, &rows).map_err(io)?;
        write_json(&dir.join("sweep.json"), &summary).map_err(io)?;
    }
    Ok(SweepOutput { summary, runs })
}
