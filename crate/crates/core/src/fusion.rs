//! Fusion-center combination of per-station coarse detections.

use crate::config::{BsDescriptor, FusionMethod};
use crate::error::{Error, Result};
use crate::geometry::{global_bearing, local_polar_to_global, GlobalPoint, LocalPolar};

/// Eigenvalue ratio of the 2×2 normal matrix below which WLS is declared
/// rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// One station's coarse detection, mapped to the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMeasurement {
    pub bs: usize,
    pub station: GlobalPoint,
    pub local: LocalPolar,
    /// Global bearing `ϑ + θ`.
    pub bearing_rad: f64,
    pub point: GlobalPoint,
    /// Raw map peak `R_max` in watts.
    pub peak_w: f64,
    /// Peak divided by the largest peak over all detecting stations.
    pub intensity: f64,
}

impl CoarseMeasurement {
    /// Back-projects a local detection. `intensity` starts at 1 and is set by
    /// [`normalize_intensities`].
    pub fn new(bs: usize, station: &BsDescriptor, local: LocalPolar, peak_w: f64) -> Self {
        Self {
            bs,
            station: station.position,
            local,
            bearing_rad: global_bearing(local.angle_rad, station),
            point: local_polar_to_global(&local, station),
            peak_w,
            intensity: 1.0,
        }
    }
}

/// Divides every peak by the global maximum so the strongest station has
/// intensity 1.
pub fn normalize_intensities(measurements: &mut [CoarseMeasurement]) {
    let max = measurements.iter().map(|m| m.peak_w).fold(0.0, f64::max);
    for m in measurements.iter_mut() {
        m.intensity = if max > 0.0 { m.peak_w / max } else { 0.0 };
    }
}

fn require(measurements: &[CoarseMeasurement], needed: usize) -> Result<()> {
    if measurements.len() < needed {
        return Err(Error::InsufficientMeasurements {
            needed,
            got: measurements.len(),
        });
    }
    Ok(())
}

pub fn fuse_simple_average(measurements: &[CoarseMeasurement]) -> Result<GlobalPoint> {
    require(measurements, 1)?;
    let n = measurements.len() as f64;
    let (sx, sy) = measurements
        .iter()
        .fold((0.0, 0.0), |(x, y), m| (x + m.point.x, y + m.point.y));
    Ok(GlobalPoint::new(sx / n, sy / n))
}

pub fn fuse_weighted_average(measurements: &[CoarseMeasurement]) -> Result<GlobalPoint> {
    require(measurements, 1)?;
    let total: f64 = measurements.iter().map(|m| m.intensity).sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let (sx, sy) = measurements.iter().fold((0.0, 0.0), |(x, y), m| {
        (x + m.intensity * m.point.x, y + m.intensity * m.point.y)
    });
    Ok(GlobalPoint::new(sx / total, sy / total))
}

/// One weighted row `a·[x, y]ᵀ = b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsRow {
    pub a: [f64; 2],
    pub b: f64,
    pub weight: f64,
}

fn bearing_row(m: &CoarseMeasurement, weight: f64) -> WlsRow {
    let (s, c) = m.bearing_rad.sin_cos();
    WlsRow {
        a: [s, -c],
        b: s * m.station.x - c * m.station.y,
        weight,
    }
}

fn range_difference_row(reference: &CoarseMeasurement, m: &CoarseMeasurement, weight: f64) -> WlsRow {
    let (o1, oi) = (reference.station, m.station);
    WlsRow {
        a: [2.0 * (o1.x - oi.x), 2.0 * (o1.y - oi.y)],
        b: m.local.range_m.powi(2) - reference.local.range_m.powi(2) + o1.norm_sqr() - oi.norm_sqr(),
        weight,
    }
}

/// Index of the reference station: highest intensity, first on ties.
pub fn reference_index(measurements: &[CoarseMeasurement]) -> usize {
    let mut best = 0;
    for (i, m) in measurements.iter().enumerate() {
        if m.intensity > measurements[best].intensity {
            best = i;
        }
    }
    best
}

/// The `2N − 1` rows: reference bearing first, then for each other station
/// its range-difference row and its bearing row.
pub fn wls_rows(measurements: &[CoarseMeasurement]) -> Vec<WlsRow> {
    let r = reference_index(measurements);
    let reference = &measurements[r];
    let mut rows = vec![bearing_row(reference, reference.intensity)];
    for (i, m) in measurements.iter().enumerate() {
        if i == r {
            continue;
        }
        rows.push(range_difference_row(reference, m, reference.intensity * m.intensity));
        rows.push(bearing_row(m, m.intensity));
    }
    rows
}

/// Weighted least squares over [`wls_rows`]. Fails on fewer than two
/// stations or a rank-deficient normal matrix.
pub fn fuse_wls(measurements: &[CoarseMeasurement]) -> Result<GlobalPoint> {
    require(measurements, 2)?;
    solve_rows(&wls_rows(measurements))
}

pub fn solve_rows(rows: &[WlsRow]) -> Result<GlobalPoint> {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rows {
        let [u, v] = r.a;
        a11 += r.weight * u * u;
        a12 += r.weight * u * v;
        a22 += r.weight * v * v;
        b1 += r.weight * u * r.b;
        b2 += r.weight * v * r.b;
    }
    let tr = a11 + a22;
    let det = a11 * a22 - a12 * a12;
    let disc = ((a11 - a22).powi(2) + 4.0 * a12 * a12).sqrt();
    let l_max = 0.5 * (tr + disc);
    let l_min = 0.5 * (tr - disc);
    let ratio = if l_max > 0.0 { l_min / l_max } else { 0.0 };
    if !(ratio > RANK_TOLERANCE) {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(GlobalPoint::new((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det))
}

/// Fused point plus whether a fallback to the weighted average was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionOutcome {
    pub point: GlobalPoint,
    pub fallback: bool,
}

/// Runs `method`. WLS falls back to the weighted average when it has one
/// station or a rank-deficient system.
pub fn fuse(method: FusionMethod, measurements: &[CoarseMeasurement]) -> Result<FusionOutcome> {
    let plain = |point| FusionOutcome { point, fallback: false };
    match method {
        FusionMethod::Simple => fuse_simple_average(measurements).map(plain),
        FusionMethod::Weighted => fuse_weighted_average(measurements).map(plain),
        FusionMethod::Wls => match fuse_wls(measurements) {
            Ok(p) => Ok(plain(p)),
            Err(Error::InsufficientMeasurements { .. } | Error::RankDeficient { .. }) if !measurements.is_empty() => {
                Ok(FusionOutcome {
                    point: fuse_weighted_average(measurements)?,
                    fallback: true,
                })
            }
            Err(e) => Err(e),
        },
    }
}
