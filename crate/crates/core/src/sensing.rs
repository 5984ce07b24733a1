//! Stage-1 coarse sensing at one base station: reciprocal filtering, the
//! zero-padded double periodogram, range-angle map construction, threshold
//! detection and density clustering of detections.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::array::{inner, BeamVector};
use crate::channel::{Stage1Rx, TimeFreqGrid};
use crate::config::{DerivedConstants, FrameConfig};
use crate::error::{Error, Result};
use crate::geometry::LocalPolar;

/// Element-wise division of receive-beamformed samples by the transmitted
/// symbols: `ỹ_{k,m} = w_Rᴴ y[k,m] / x_{k,m}`.
pub fn reciprocal_filter(rx: &Stage1Rx, rx_beam: &BeamVector) -> Result<TimeFreqGrid> {
    if rx_beam.len() != rx.rx_antennas {
        return Err(Error::Dimension(format!(
            "receive beam has {} taps for {} antennas",
            rx_beam.len(),
            rx.rx_antennas
        )));
    }
    let k_s = rx.symbols.subcarriers;
    let mut beamformed = TimeFreqGrid::zeros(k_s, rx.symbols.symbols);
    for m in 0..rx.symbols.symbols {
        for k in 0..k_s {
            beamformed.set(k, m, inner(&rx_beam.coefficients, rx.vector(k, m)));
        }
    }
    divide_symbols(&beamformed, &rx.symbols)
}

/// `y_{k,m} / x_{k,m}` for already beamformed samples.
pub fn divide_symbols(beamformed: &TimeFreqGrid, symbols: &TimeFreqGrid) -> Result<TimeFreqGrid> {
    if beamformed.subcarriers != symbols.subcarriers || beamformed.symbols != symbols.symbols {
        return Err(Error::Dimension("sample and symbol grids differ".into()));
    }
    let mut out = beamformed.clone();
    for (j, (o, x)) in out.data.iter_mut().zip(&symbols.data).enumerate() {
        if x.norm_sqr() == 0.0 {
            return Err(Error::ZeroSymbol {
                k: j % symbols.subcarriers,
                m: j / symbols.subcarriers,
            });
        }
        *o /= x;
    }
    Ok(out)
}

/// Power map `P(q, p)` over range rows and Doppler columns, stored row-major
/// (`q * doppler_bins + p`).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub range_bins: usize,
    pub doppler_bins: usize,
    pub direction: usize,
    pub power: Vec<f64>,
}

impl RangeDopplerMap {
    pub fn get(&self, q: usize, p: usize) -> f64 {
        self.power[q * self.doppler_bins + p]
    }

    /// Largest value and its `(q, p)`, lowest row-major index on ties.
    pub fn peak(&self) -> (usize, usize, f64) {
        let (i, v) = argmax(&self.power);
        (i / self.doppler_bins, i % self.doppler_bins, v)
    }

    /// Column `p` maximizing its largest entry, lowest `p` on ties.
    pub fn strongest_column(&self) -> usize {
        strongest_column(&self.power, self.doppler_bins)
    }
}

fn strongest_column(rows: &[f64], cols: usize) -> usize {
    let mut col_max = vec![f64::NEG_INFINITY; cols];
    for row in rows.chunks_exact(cols) {
        for (m, v) in col_max.iter_mut().zip(row) {
            *m = m.max(*v);
        }
    }
    argmax(&col_max).0
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.iter().enumerate() {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    best
}

/// Reusable FFT plans for `K_p × M_p` periodograms.
///
/// The delay transform runs first (one length-`K_p` inverse FFT per symbol)
/// so that only the kept range rows go through the Doppler transform.
pub struct PeriodogramPlan {
    range_padding: usize,
    doppler_padding: usize,
    range_fft: Arc<dyn Fft<f64>>,
    doppler_fft: Arc<dyn Fft<f64>>,
}

impl PeriodogramPlan {
    pub fn new(range_padding: usize, doppler_padding: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            range_padding,
            doppler_padding,
            range_fft: planner.plan_fft_inverse(range_padding),
            doppler_fft: planner.plan_fft_forward(doppler_padding),
        }
    }

    pub fn for_frame(frame: &FrameConfig) -> Self {
        Self::new(frame.range_padding, frame.doppler_padding)
    }

    /// `P(q, p) = |Σ_k Σ_m ỹ_{k,m} e^{-j2πmp/M_p} e^{+j2πkq/K_p}|² / (K_s M_s)`
    /// for `q < rows`.
    pub fn compute(&self, filtered: &TimeFreqGrid, rows: usize) -> Result<RangeDopplerMap> {
        let (k_s, m_s) = (filtered.subcarriers, filtered.symbols);
        let (k_p, m_p) = (self.range_padding, self.doppler_padding);
        if k_p < k_s || m_p < m_s {
            return Err(Error::Dimension(format!(
                "padding {k_p}×{m_p} smaller than block {k_s}×{m_s}"
            )));
        }
        if rows == 0 || rows > k_p {
            return Err(Error::Dimension(format!("{rows} range rows requested from K_p={k_p}")));
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut buf = vec![zero; k_p];
        let mut scratch = vec![zero; self.range_fft.get_inplace_scratch_len().max(self.doppler_fft.get_inplace_scratch_len())];
        // delay profiles, stored q-major so each Doppler input is contiguous
        let mut profiles = vec![zero; rows * m_s];
        for m in 0..m_s {
            buf[..k_s].copy_from_slice(&filtered.data[m * k_s..(m + 1) * k_s]);
            buf[k_s..].fill(zero);
            self.range_fft.process_with_scratch(&mut buf, &mut scratch);
            for q in 0..rows {
                profiles[q * m_s + m] = buf[q];
            }
        }
        let norm = 1.0 / (k_s * m_s) as f64;
        let mut power = vec![0.0; rows * m_p];
        let mut dbuf = vec![zero; m_p];
        for q in 0..rows {
            dbuf[..m_s].copy_from_slice(&profiles[q * m_s..(q + 1) * m_s]);
            dbuf[m_s..].fill(zero);
            self.doppler_fft.process_with_scratch(&mut dbuf, &mut scratch);
            for (p, v) in dbuf.iter().enumerate() {
                power[q * m_p + p] = v.norm_sqr() * norm;
            }
        }
        Ok(RangeDopplerMap {
            range_bins: rows,
            doppler_bins: m_p,
            direction: 0,
            power,
        })
    }
}

/// Full `K_p × M_p` periodogram.
pub fn periodogram(filtered: &TimeFreqGrid, range_padding: usize, doppler_padding: usize) -> Result<RangeDopplerMap> {
    PeriodogramPlan::new(range_padding, doppler_padding).compute(filtered, range_padding)
}

/// Index-to-physical mapping of a range-angle map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapGeometry {
    pub range_bin_m: f64,
    /// Angle of direction 0, `-θ_0`.
    pub first_angle_rad: f64,
    pub angle_step_rad: f64,
    pub doppler_bin_hz: f64,
    pub doppler_bins: usize,
}

impl MapGeometry {
    pub fn new(frame: &FrameConfig, constants: &DerivedConstants, half_sector_rad: f64) -> Self {
        Self {
            range_bin_m: constants.range_bin_m,
            first_angle_rad: -half_sector_rad,
            angle_step_rad: constants.angle_step_rad,
            doppler_bin_hz: frame.doppler_bin_hz(),
            doppler_bins: frame.doppler_padding,
        }
    }

    pub fn range_m(&self, q: usize) -> f64 {
        q as f64 * self.range_bin_m
    }

    pub fn angle_rad(&self, j: usize) -> f64 {
        self.first_angle_rad + j as f64 * self.angle_step_rad
    }

    /// Signed Doppler of column `p` (upper half of the FFT maps to negative).
    pub fn doppler_hz(&self, p: usize) -> f64 {
        if p < self.doppler_bins.div_ceil(2) {
            p as f64 * self.doppler_bin_hz
        } else {
            (p as f64 - self.doppler_bins as f64) * self.doppler_bin_hz
        }
    }
}

/// Range-angle map `R(q̄, j) = P_j(q̄, p_max^j)`, row-major (`q̄ * N_dir + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAngleMap {
    pub rows: usize,
    pub directions: usize,
    pub power: Vec<f64>,
    /// Selected Doppler column `p_max^j` of each direction.
    pub doppler_index: Vec<usize>,
    pub geometry: MapGeometry,
}

impl RangeAngleMap {
    pub fn new(rows: usize, directions: usize, geometry: MapGeometry) -> Self {
        Self {
            rows,
            directions,
            power: vec![0.0; rows * directions],
            doppler_index: vec![0; directions],
            geometry,
        }
    }

    pub fn get(&self, q: usize, j: usize) -> f64 {
        self.power[q * self.directions + j]
    }

    /// Fills direction `j` from its range-Doppler map, restricted to the first
    /// `rows` range bins.
    pub fn set_direction(&mut self, j: usize, map: &RangeDopplerMap) -> Result<()> {
        if map.range_bins < self.rows {
            return Err(Error::Dimension(format!(
                "range-Doppler map has {} rows, range-angle map needs {}",
                map.range_bins, self.rows
            )));
        }
        let cols = map.doppler_bins;
        let rows = &map.power[..self.rows * cols];
        let p = strongest_column(rows, cols);
        self.doppler_index[j] = p;
        for q in 0..self.rows {
            self.power[q * self.directions + j] = rows[q * cols + p];
        }
        Ok(())
    }

    /// Global maximum `(q̄, j, value)`, lowest row-major index on ties.
    pub fn peak(&self) -> (usize, usize, f64) {
        let (i, v) = argmax(&self.power);
        (i / self.directions, i % self.directions, v)
    }

    fn detection(&self, bs: usize, q: usize, j: usize, threshold_w: f64) -> Detection {
        Detection {
            bs,
            range_bin: q,
            direction: j,
            range_m: self.geometry.range_m(q),
            angle_rad: self.geometry.angle_rad(j),
            intensity_w: self.get(q, j),
            threshold_w,
            doppler_hz: self.geometry.doppler_hz(self.doppler_index[j]),
        }
    }
}

pub fn build_range_angle_map(maps: &[RangeDopplerMap], rows: usize, geometry: MapGeometry) -> Result<RangeAngleMap> {
    let mut out = RangeAngleMap::new(rows, maps.len(), geometry);
    for (j, m) in maps.iter().enumerate() {
        out.set_direction(j, m)?;
    }
    Ok(out)
}

/// A range-angle cell declared target-present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bs: usize,
    pub range_bin: usize,
    pub direction: usize,
    pub range_m: f64,
    pub angle_rad: f64,
    pub intensity_w: f64,
    pub threshold_w: f64,
    pub doppler_hz: f64,
}

impl Detection {
    pub fn polar(&self) -> LocalPolar {
        LocalPolar::new(self.range_m, self.angle_rad)
    }
}

/// Every cell with `R(q̄, j) > η`, in row-major order.
pub fn detect(map: &RangeAngleMap, threshold_w: f64, bs: usize) -> Vec<Detection> {
    let mut out = Vec::new();
    for q in 0..map.rows {
        for j in 0..map.directions {
            if map.get(q, j) > threshold_w {
                out.push(map.detection(bs, q, j, threshold_w));
            }
        }
    }
    out
}

/// Single-target mode: the global maximum if it reaches `η`.
pub fn peak_detection(map: &RangeAngleMap, threshold_w: f64, bs: usize) -> Option<Detection> {
    let (q, j, v) = map.peak();
    (v >= threshold_w).then(|| map.detection(bs, q, j, threshold_w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<Detection>,
    /// Intensity-weighted centroid in local polar coordinates.
    pub centroid: LocalPolar,
    pub peak_intensity_w: f64,
}

/// DBSCAN over detections in local Cartesian coordinates. A point is a core
/// point when at least `min_pts` detections (itself included) lie within
/// `eps_m`; points not reachable from any core point are dropped as noise.
pub fn cluster_detections(detections: &[Detection], eps_m: f64, min_pts: usize) -> Vec<Cluster> {
    let xy: Vec<(f64, f64)> = detections.iter().map(|d| d.polar().local_xy()).collect();
    let n = xy.len();
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| (xy[i].0 - xy[j].0).hypot(xy[i].1 - xy[j].1) <= eps_m)
            .collect()
    };
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        label[i] = id;
        let mut queue = seeds;
        while let Some(j) = queue.pop() {
            if label[j] == NOISE {
                label[j] = id;
                members.push(j);
                continue;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = id;
            members.push(j);
            let nb = neighbours(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
        .into_iter()
        .map(|idx| {
            let members: Vec<Detection> = idx.iter().map(|&i| detections[i]).collect();
            let total: f64 = members.iter().map(|d| d.intensity_w).sum();
            let (mut cx, mut cy) = (0.0, 0.0);
            for (i, d) in idx.iter().zip(&members) {
                cx += d.intensity_w * xy[*i].0;
                cy += d.intensity_w * xy[*i].1;
            }
            cx /= total;
            cy /= total;
            Cluster {
                centroid: LocalPolar::new(cx.hypot(cy), cy.atan2(cx)),
                peak_intensity_w: members.iter().map(|d| d.intensity_w).fold(0.0, f64::max),
                members,
            }
        })
        .collect()
}

/// Default clustering radius: two range bins.
pub fn default_cluster_eps(frame: &FrameConfig) -> f64 {
    2.0 * frame.range_bin_m()
}
