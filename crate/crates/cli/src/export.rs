//! CSV and JSON result files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use isacnet_core::montecarlo::{CampaignMetrics, StageSelection};
use isacnet_core::refine::LikelihoodMap;
use isacnet_core::sensing::RangeAngleMap;
use isacnet_core::ScenarioDoc;
use serde::{Deserialize, Serialize};

pub const METRICS_HEADER: [&str; 8] = ["point_y_m", "method", "pd", "rmse_m", "p20_m", "p50_m", "p80_m", "n_det"];

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub point_y_m: f64,
    pub method: String,
    pub pd: f64,
    pub rmse_m: Option<f64>,
    pub p20_m: Option<f64>,
    pub p50_m: Option<f64>,
    pub p80_m: Option<f64>,
    pub n_det: usize,
}

/// Rows for every trajectory point and every method in `methods`, in that
/// order.
pub fn metrics_rows(metrics: &CampaignMetrics, methods: &[String]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for p in &metrics.points {
        for name in methods {
            if let Some(m) = p.method(name) {
                rows.push(MetricsRow {
                    point_y_m: p.point.y,
                    method: m.method.clone(),
                    pd: m.pd,
                    rmse_m: m.rmse_m,
                    p20_m: m.p20_m,
                    p50_m: m.p50_m,
                    p80_m: m.p80_m,
                    n_det: m.n_det,
                });
            }
        }
    }
    rows
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> anyhow::Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Everything needed to compare two campaign runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: ScenarioDoc,
    pub stages: StageSelection,
    pub metrics: CampaignMetrics,
}

pub fn write_summary(path: &Path, summary: &Summary) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), summary)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> anyhow::Result<Summary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Range-angle map as `q_bar,j,r_m,theta_rad,power_W`.
pub fn write_range_angle_csv(path: &Path, map: &RangeAngleMap) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["q_bar", "j", "r_m", "theta_rad", "power_W"])?;
    for q in 0..map.rows {
        for j in 0..map.directions {
            w.write_record(&[
                q.to_string(),
                j.to_string(),
                map.geometry.range_m(q).to_string(),
                map.geometry.angle_rad(j).to_string(),
                map.get(q, j).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One likelihood surface (`values` in the map's row-major order) as
/// `x_m,y_m,value`.
pub fn write_likelihood_csv(path: &Path, map: &LikelihoodMap, values: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["x_m", "y_m", "value"])?;
    for (i, v) in values.iter().enumerate() {
        let p = map.roi.point(i / map.nx, i % map.nx);
        w.write_record(&[p.x.to_string(), p.y.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
