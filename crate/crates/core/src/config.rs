//! Scenario and waveform configuration.
//!
//! [`ScenarioDoc`] is the serializable document (units in its field names:
//! Hz, s, W, m, rad, or `_deg` / `_dbm` where stated). [`Scenario::from_doc`]
//! validates it and resolves every derived quantity into the runtime types
//! [`FrameConfig`], [`BsDescriptor`] and [`SimConfig`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GlobalPoint;
use crate::SPEED_OF_LIGHT;

/// Symbol duration of the 120 kHz FR2 numerology, used to derive the cyclic
/// prefix when the document gives neither.
pub const DEFAULT_SYMBOL_DURATION_S: f64 = 8.92e-6;

/// OFDM numerology and resource split of one sensing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Total active subcarriers `K`.
    pub active_subcarriers: usize,
    /// OFDM symbols per frame `M`.
    pub symbols_per_frame: usize,
    pub cyclic_prefix_s: f64,
    /// `K_s`
    pub sensing_subcarriers: usize,
    /// `M_s`, symbols per sensing direction.
    pub sensing_symbols: usize,
    pub directions: usize,
    pub bandwidth_fraction: f64,
    pub power_fraction: f64,
    /// Per-subcarrier transmit power `P_avg`, W.
    pub power_per_subcarrier_w: f64,
    pub noise_psd_w_per_hz: f64,
    /// `K_p`, zero-padded range transform length.
    pub range_padding: usize,
    /// `M_p`, zero-padded Doppler transform length.
    pub doppler_padding: usize,
}

impl FrameConfig {
    /// `T_s = 1/Δf + T_cp`.
    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz + self.cyclic_prefix_s
    }

    /// Noise variance per subcarrier `σ²_N = N_0 Δf`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_psd_w_per_hz * self.subcarrier_spacing_hz
    }

    /// Range covered by one zero-padded delay bin, `c / (2 Δf K_p)`.
    pub fn range_bin_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.subcarrier_spacing_hz * self.range_padding as f64)
    }

    /// Doppler covered by one zero-padded Doppler bin, `1 / (M_p T_s)`.
    pub fn doppler_bin_hz(&self) -> f64 {
        1.0 / (self.doppler_padding as f64 * self.symbol_duration_s())
    }

    /// Number of range rows kept in a range-angle map, `ceil(T_cp Δf K_p)`.
    pub fn range_rows(&self) -> usize {
        let rows = self.cyclic_prefix_s * self.subcarrier_spacing_hz * self.range_padding as f64;
        // guard against products like 289.0000000001 from decimal inputs
        (rows - 1e-9).ceil().max(1.0) as usize
    }

    fn validate(&self, path: &str) -> Result<()> {
        let p = |f: &str| format!("{path}.{f}");
        if !(self.carrier_hz > 0.0) {
            return Err(Error::config(p("carrier_hz"), "carrier frequency must be positive"));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::config(
                p("subcarrier_spacing_hz"),
                "subcarrier spacing must be positive",
            ));
        }
        if !(self.cyclic_prefix_s >= 0.0) || !(self.symbol_duration_s() > 0.0) {
            return Err(Error::config(p("cyclic_prefix_s"), "cyclic prefix must be non-negative"));
        }
        if self.active_subcarriers == 0 {
            return Err(Error::config(p("active_subcarriers"), "must be at least 1"));
        }
        if !(self.bandwidth_fraction > 0.0 && self.bandwidth_fraction <= 1.0) {
            return Err(Error::config(p("bandwidth_fraction"), "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.power_fraction) {
            return Err(Error::config(p("power_fraction"), "must lie in [0, 1]"));
        }
        if self.sensing_subcarriers == 0 || self.sensing_subcarriers > self.active_subcarriers {
            return Err(Error::config(
                p("bandwidth_fraction"),
                format!(
                    "sensing subcarriers {} must lie in [1, K={}]",
                    self.sensing_subcarriers, self.active_subcarriers
                ),
            ));
        }
        if self.sensing_symbols == 0 || self.sensing_symbols > self.symbols_per_frame {
            return Err(Error::config(
                p("symbols_per_direction"),
                format!("must lie in [1, M={}]", self.symbols_per_frame),
            ));
        }
        if self.directions == 0 {
            return Err(Error::config(p("directions"), "must be at least 1"));
        }
        if !(self.power_per_subcarrier_w > 0.0) {
            return Err(Error::config(p("power_per_subcarrier_dbm"), "power must be finite"));
        }
        if !(self.noise_psd_w_per_hz > 0.0) {
            return Err(Error::config(p("noise_psd_w_per_hz"), "noise PSD must be positive"));
        }
        if self.range_padding < self.sensing_subcarriers {
            return Err(Error::config(
                p("range_padding"),
                format!("K_p={} must be at least K_s={}", self.range_padding, self.sensing_subcarriers),
            ));
        }
        if self.doppler_padding < self.sensing_symbols {
            return Err(Error::config(
                p("doppler_padding"),
                format!("M_p={} must be at least M_s={}", self.doppler_padding, self.sensing_symbols),
            ));
        }
        Ok(())
    }
}

/// Round-half-up `K_s = round(ρ_f K)`.
pub fn sensing_subcarriers(bandwidth_fraction: f64, active_subcarriers: usize) -> usize {
    (bandwidth_fraction * active_subcarriers as f64 + 0.5).floor() as usize
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// A sensing base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsDescriptor {
    pub position: GlobalPoint,
    /// Rotation `ϑ` of the local frame, rad in (-π, π].
    pub orientation_rad: f64,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Linear single-element gains.
    pub tx_gain: f64,
    pub rx_gain: f64,
    /// Stage-1 scan half-sector `θ_0`.
    pub scan_half_sector_rad: f64,
    /// Direction of the communication beam sharing the Stage-1 frame.
    pub comm_direction_rad: f64,
}

impl BsDescriptor {
    /// A 50-element station with unit element gains scanning ±60°.
    pub fn new(position: GlobalPoint, orientation_rad: f64) -> Self {
        Self {
            position,
            orientation_rad,
            tx_antennas: 50,
            rx_antennas: 50,
            tx_gain: 1.0,
            rx_gain: 1.0,
            scan_half_sector_rad: PI / 3.0,
            comm_direction_rad: PI / 4.0,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let p = |f: &str| format!("{path}.{f}");
        if !self.position.x.is_finite() || !self.position.y.is_finite() {
            return Err(Error::config(p("position_m"), "must be finite"));
        }
        if !(self.orientation_rad > -PI && self.orientation_rad <= PI) {
            return Err(Error::config(p("orientation_rad"), "must lie in (-π, π]"));
        }
        if self.tx_antennas == 0 {
            return Err(Error::config(p("tx_antennas"), "must be at least 1"));
        }
        if self.rx_antennas == 0 {
            return Err(Error::config(p("rx_antennas"), "must be at least 1"));
        }
        if !(self.tx_gain > 0.0) || !(self.rx_gain > 0.0) {
            return Err(Error::config(p("element_gain"), "element gains must be positive"));
        }
        if !(self.scan_half_sector_rad > 0.0 && self.scan_half_sector_rad <= PI / 2.0 + 1e-12) {
            return Err(Error::config(p("scan_half_sector_deg"), "must lie in (0°, 90°]"));
        }
        Ok(())
    }
}

/// Constants that follow from a frame, a station and the false-alarm rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub noise_variance: f64,
    /// Scan step `Δθ = 2θ_0/(N_dir - 1)`.
    pub angle_step_rad: f64,
    pub range_bin_m: f64,
    pub range_rows: usize,
    /// `|Ω| = q_max N_dir`.
    pub search_space: usize,
    /// Detection threshold `η = σ²_N ln(|Ω| / FAR)`.
    pub threshold_w: f64,
}

pub fn derived_constants(frame: &FrameConfig, bs: &BsDescriptor, far: f64) -> Result<DerivedConstants> {
    if frame.directions < 2 {
        return Err(Error::config(
            "stage1.directions",
            "a scan needs at least 2 directions",
        ));
    }
    if !(far > 0.0 && far < 1.0) {
        return Err(Error::config("simulation.far", "must lie in (0, 1)"));
    }
    let noise_variance = frame.noise_variance();
    let range_rows = frame.range_rows();
    let search_space = range_rows * frame.directions;
    Ok(DerivedConstants {
        noise_variance,
        angle_step_rad: 2.0 * bs.scan_half_sector_rad / (frame.directions - 1) as f64,
        range_bin_m: frame.range_bin_m(),
        range_rows,
        search_space,
        threshold_w: detection_threshold(noise_variance, search_space as f64, far),
    })
}

/// `η = σ² ln(|Ω| / FAR)`.
pub fn detection_threshold(noise_variance: f64, search_space: f64, far: f64) -> f64 {
    noise_variance * (search_space / far).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Simple,
    Weighted,
    Wls,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Simple, FusionMethod::Weighted, FusionMethod::Wls];

    pub fn name(&self) -> &'static str {
        match self {
            FusionMethod::Simple => "simple",
            FusionMethod::Weighted => "weighted",
            FusionMethod::Wls => "wls",
        }
    }
}

/// Where the Stage-2 RoI is centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiModel {
    /// The fused coarse estimate of the trial.
    Coarse,
    /// The true position perturbed by `N(0, σ_p²/2 I₂)`.
    Gaussian,
}

/// Monte Carlo and Stage-2 settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub far: f64,
    pub trials: usize,
    pub roi_side_m: f64,
    pub grid_step_x_m: f64,
    pub grid_step_y_m: f64,
    /// Coarse accuracy `σ_p` of the Gaussian RoI model.
    pub coarse_sigma_m: f64,
    pub fusion: FusionMethod,
    pub roi_model: RoiModel,
    pub seed: u64,
    pub trajectory: Vec<GlobalPoint>,
    /// Dolph-Chebyshev sidelobe level for receive beamformers, dB.
    pub taper_db: Option<f64>,
    /// Use the Stage-1 Doppler estimate in Stage 2 instead of 0 Hz.
    pub use_coarse_doppler: bool,
    /// Round beamformer angles to 1 mrad and reuse them across grid points.
    pub beam_cache: bool,
    /// Simulate the full N_R-antenna Stage-1 cube instead of the
    /// receive-beamformed samples.
    pub full_stage1_cube: bool,
}

impl SimConfig {
    pub fn grid_points_x(&self) -> usize {
        (self.roi_side_m / self.grid_step_x_m).round() as usize + 1
    }

    pub fn grid_points_y(&self) -> usize {
        (self.roi_side_m / self.grid_step_y_m).round() as usize + 1
    }

    fn validate(&self) -> Result<()> {
        if !(self.far > 0.0 && self.far < 1.0) {
            return Err(Error::config("simulation.far", "must lie in (0, 1)"));
        }
        if !(self.roi_side_m > 0.0) {
            return Err(Error::config("stage2.roi_side_m", "must be positive"));
        }
        for (name, step) in [("grid_step_x_m", self.grid_step_x_m), ("grid_step_y_m", self.grid_step_y_m)] {
            if !(step > 0.0) {
                return Err(Error::config(format!("stage2.{name}"), "grid step must be positive"));
            }
            let cells = self.roi_side_m / step;
            if (cells - cells.round()).abs() > 1e-6 {
                return Err(Error::config(
                    format!("stage2.{name}"),
                    format!("RoI side {} m is not an integer multiple of {step} m", self.roi_side_m),
                ));
            }
        }
        if !(self.coarse_sigma_m >= 0.0) {
            return Err(Error::config("stage2.coarse_sigma_m", "must be non-negative"));
        }
        if let Some(db) = self.taper_db {
            if !(db > 0.0) {
                return Err(Error::config("stage2.taper_db", "sidelobe level must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub mean_rcs_m2: f64,
    pub velocity_mps: [f64; 2],
}

/// Validated scenario shared read-only by every worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub stage1: FrameConfig,
    pub stage2: FrameConfig,
    pub stations: Vec<BsDescriptor>,
    pub target: TargetSpec,
    pub sim: SimConfig,
}

// ---------------------------------------------------------------------------
// Document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub common: CommonDoc,
    pub stage1: Stage1Doc,
    pub stage2: Stage2Doc,
    pub base_stations: Vec<StationDoc>,
    pub target: TargetDoc,
    pub simulation: SimulationDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonDoc {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub active_subcarriers: usize,
    pub symbols_per_frame: usize,
    /// Takes precedence over `symbol_duration_s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cyclic_prefix_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_duration_s: Option<f64>,
    pub power_per_subcarrier_dbm: f64,
    pub noise_psd_w_per_hz: f64,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    #[serde(default = "one")]
    pub tx_element_gain: f64,
    #[serde(default = "one")]
    pub rx_element_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Doc {
    pub directions: usize,
    pub symbols_per_direction: usize,
    pub bandwidth_fraction: f64,
    pub power_fraction: f64,
    pub scan_half_sector_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler_padding: Option<usize>,
    pub far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Doc {
    pub directions: usize,
    pub symbols_per_direction: usize,
    pub bandwidth_fraction: f64,
    pub power_fraction: f64,
    pub roi_side_m: f64,
    pub grid_step_x_m: f64,
    pub grid_step_y_m: f64,
    pub coarse_sigma_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper_db: Option<f64>,
    #[serde(default)]
    pub use_coarse_doppler: bool,
    #[serde(default = "yes")]
    pub beam_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationDoc {
    pub position_m: [f64; 2],
    pub orientation_rad: f64,
    #[serde(default = "default_comm_deg")]
    pub comm_direction_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub mean_rcs_m2: f64,
    #[serde(default)]
    pub velocity_mps: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDoc {
    pub trials: usize,
    pub seed: u64,
    pub fusion: FusionMethod,
    #[serde(default = "default_roi_model")]
    pub roi_model: RoiModel,
    pub trajectory_m: Vec<[f64; 2]>,
    #[serde(default)]
    pub full_stage1_cube: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_comm_deg() -> f64 {
    45.0
}
fn default_roi_model() -> RoiModel {
    RoiModel::Coarse
}

fn default_padding(n: usize, table_value: usize) -> usize {
    n.next_power_of_two().max(table_value)
}

impl Scenario {
    /// Validates a document and resolves all derived fields.
    pub fn from_doc(doc: &ScenarioDoc) -> Result<Scenario> {
        let c = &doc.common;
        let cyclic_prefix_s = match (c.cyclic_prefix_s, c.symbol_duration_s) {
            (Some(cp), _) => cp,
            (None, ts) => ts.unwrap_or(DEFAULT_SYMBOL_DURATION_S) - 1.0 / c.subcarrier_spacing_hz,
        };
        if !(c.subcarrier_spacing_hz > 0.0) {
            return Err(Error::config(
                "common.subcarrier_spacing_hz",
                "subcarrier spacing must be positive",
            ));
        }
        if !c.power_per_subcarrier_dbm.is_finite() {
            return Err(Error::config("common.power_per_subcarrier_dbm", "must be finite"));
        }
        let p_avg = dbm_to_watts(c.power_per_subcarrier_dbm);
        let frame = |path: &str,
                     directions: usize,
                     symbols: usize,
                     rho_f: f64,
                     rho_p: f64,
                     k_p: Option<usize>,
                     m_p: Option<usize>|
         -> Result<FrameConfig> {
            if !(rho_f > 0.0 && rho_f <= 1.0) {
                return Err(Error::config(format!("{path}.bandwidth_fraction"), "must lie in (0, 1]"));
            }
            let k_s = sensing_subcarriers(rho_f, c.active_subcarriers);
            let f = FrameConfig {
                carrier_hz: c.carrier_hz,
                subcarrier_spacing_hz: c.subcarrier_spacing_hz,
                active_subcarriers: c.active_subcarriers,
                symbols_per_frame: c.symbols_per_frame,
                cyclic_prefix_s,
                sensing_subcarriers: k_s,
                sensing_symbols: symbols,
                directions,
                bandwidth_fraction: rho_f,
                power_fraction: rho_p,
                power_per_subcarrier_w: p_avg,
                noise_psd_w_per_hz: c.noise_psd_w_per_hz,
                range_padding: k_p.unwrap_or_else(|| default_padding(k_s, 4096)),
                doppler_padding: m_p.unwrap_or_else(|| default_padding(symbols, 256)),
            };
            f.validate(path)?;
            Ok(f)
        };
        let s1 = &doc.stage1;
        let stage1 = frame(
            "stage1",
            s1.directions,
            s1.symbols_per_direction,
            s1.bandwidth_fraction,
            s1.power_fraction,
            s1.range_padding,
            s1.doppler_padding,
        )?;
        let s2 = &doc.stage2;
        let stage2 = frame(
            "stage2",
            s2.directions,
            s2.symbols_per_direction,
            s2.bandwidth_fraction,
            s2.power_fraction,
            None,
            None,
        )?;

        if doc.base_stations.is_empty() {
            return Err(Error::config("base_stations", "at least one base station is required"));
        }
        let half_sector = s1.scan_half_sector_deg.to_radians();
        let stations = doc
            .base_stations
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let bs = BsDescriptor {
                    position: GlobalPoint::new(s.position_m[0], s.position_m[1]),
                    orientation_rad: s.orientation_rad,
                    tx_antennas: c.tx_antennas,
                    rx_antennas: c.rx_antennas,
                    tx_gain: c.tx_element_gain,
                    rx_gain: c.rx_element_gain,
                    scan_half_sector_rad: half_sector,
                    comm_direction_rad: s.comm_direction_deg.to_radians(),
                };
                bs.validate(&format!("base_stations[{i}]"))?;
                Ok(bs)
            })
            .collect::<Result<Vec<_>>>()?;
        // N_dir ≥ 2 for a scan; also checks FAR
        derived_constants(&stage1, &stations[0], s1.far)?;

        if !(doc.target.mean_rcs_m2 > 0.0) {
            return Err(Error::config("target.mean_rcs_m2", "mean RCS must be positive"));
        }
        let sim_doc = &doc.simulation;
        let sim = SimConfig {
            far: s1.far,
            trials: sim_doc.trials,
            roi_side_m: s2.roi_side_m,
            grid_step_x_m: s2.grid_step_x_m,
            grid_step_y_m: s2.grid_step_y_m,
            coarse_sigma_m: s2.coarse_sigma_m,
            fusion: sim_doc.fusion,
            roi_model: sim_doc.roi_model,
            seed: sim_doc.seed,
            trajectory: sim_doc
                .trajectory_m
                .iter()
                .map(|p| GlobalPoint::new(p[0], p[1]))
                .collect(),
            taper_db: s2.taper_db,
            use_coarse_doppler: s2.use_coarse_doppler,
            beam_cache: s2.beam_cache,
            full_stage1_cube: sim_doc.full_stage1_cube,
        };
        sim.validate()?;
        if sim.trials == 0 {
            return Err(Error::config("simulation.trials", "must be at least 1"));
        }
        Ok(Scenario {
            stage1,
            stage2,
            stations,
            target: TargetSpec {
                mean_rcs_m2: doc.target.mean_rcs_m2,
                velocity_mps: doc.target.velocity_mps,
            },
            sim,
        })
    }

    /// Document that reloads into an identical scenario.
    pub fn to_doc(&self) -> ScenarioDoc {
        let bs0 = &self.stations[0];
        ScenarioDoc {
            common: CommonDoc {
                carrier_hz: self.stage1.carrier_hz,
                subcarrier_spacing_hz: self.stage1.subcarrier_spacing_hz,
                active_subcarriers: self.stage1.active_subcarriers,
                symbols_per_frame: self.stage1.symbols_per_frame,
                cyclic_prefix_s: Some(self.stage1.cyclic_prefix_s),
                symbol_duration_s: None,
                power_per_subcarrier_dbm: watts_to_dbm(self.stage1.power_per_subcarrier_w),
                noise_psd_w_per_hz: self.stage1.noise_psd_w_per_hz,
                tx_antennas: bs0.tx_antennas,
                rx_antennas: bs0.rx_antennas,
                tx_element_gain: bs0.tx_gain,
                rx_element_gain: bs0.rx_gain,
            },
            stage1: Stage1Doc {
                directions: self.stage1.directions,
                symbols_per_direction: self.stage1.sensing_symbols,
                bandwidth_fraction: self.stage1.bandwidth_fraction,
                power_fraction: self.stage1.power_fraction,
                scan_half_sector_deg: bs0.scan_half_sector_rad.to_degrees(),
                range_padding: Some(self.stage1.range_padding),
                doppler_padding: Some(self.stage1.doppler_padding),
                far: self.sim.far,
            },
            stage2: Stage2Doc {
                directions: self.stage2.directions,
                symbols_per_direction: self.stage2.sensing_symbols,
                bandwidth_fraction: self.stage2.bandwidth_fraction,
                power_fraction: self.stage2.power_fraction,
                roi_side_m: self.sim.roi_side_m,
                grid_step_x_m: self.sim.grid_step_x_m,
                grid_step_y_m: self.sim.grid_step_y_m,
                coarse_sigma_m: self.sim.coarse_sigma_m,
                taper_db: self.sim.taper_db,
                use_coarse_doppler: self.sim.use_coarse_doppler,
                beam_cache: self.sim.beam_cache,
            },
            base_stations: self
                .stations
                .iter()
                .map(|b| StationDoc {
                    position_m: [b.position.x, b.position.y],
                    orientation_rad: b.orientation_rad,
                    comm_direction_deg: b.comm_direction_rad.to_degrees(),
                })
                .collect(),
            target: TargetDoc {
                mean_rcs_m2: self.target.mean_rcs_m2,
                velocity_mps: self.target.velocity_mps,
            },
            simulation: SimulationDoc {
                trials: self.sim.trials,
                seed: self.sim.seed,
                fusion: self.sim.fusion,
                roi_model: self.sim.roi_model,
                trajectory_m: self.sim.trajectory.iter().map(|p| [p.x, p.y]).collect(),
                full_stage1_cube: self.sim.full_stage1_cube,
            },
        }
    }

    /// Stage-1 constants for station `i`.
    pub fn stage1_constants(&self, i: usize) -> Result<DerivedConstants> {
        derived_constants(&self.stage1, &self.stations[i], self.sim.far)
    }

    /// Shrinks K (and hence K_s), K_p and the Stage-2 grid density by `factor`
    /// for desk-scale runs. A factor of 1 is the identity.
    pub fn scaled(&self, factor: f64) -> Result<Scenario> {
        if !(factor >= 1.0) {
            return Err(Error::config("scale", "scale factor must be at least 1"));
        }
        let mut doc = self.to_doc();
        let shrink = |n: usize| ((n as f64 / factor).round() as usize).max(1);
        doc.common.active_subcarriers = shrink(doc.common.active_subcarriers);
        doc.stage1.range_padding = doc.stage1.range_padding.map(shrink);
        doc.stage2.grid_step_x_m *= factor;
        doc.stage2.grid_step_y_m *= factor;
        // keep the RoI an integer number of cells
        let cells = (doc.stage2.roi_side_m / doc.stage2.grid_step_x_m).round().max(1.0);
        doc.stage2.roi_side_m = cells * doc.stage2.grid_step_x_m;
        doc.stage2.grid_step_y_m = doc.stage2.grid_step_x_m;
        Scenario::from_doc(&doc)
    }

    /// Same scenario with a different Stage-2 bandwidth fraction.
    pub fn with_stage2_bandwidth(&self, rho_f: f64) -> Result<Scenario> {
        let mut doc = self.to_doc();
        doc.stage2.bandwidth_fraction = rho_f;
        Scenario::from_doc(&doc)
    }
}

/// The three-station scenario with the 5G NR FR2 numerology: N_T = N_R = 50,
/// 28 GHz, 120 kHz spacing, K = 3168, M = 1120, -5 dBm per subcarrier,
/// N_0 = 4e-20 W/Hz; Stage 1 scans 50 directions with 22 symbols each at
/// 10 % sensing power; Stage 2 uses one symbol with full power over 4 m RoIs
/// sampled every 2 cm.
pub fn reference_doc() -> ScenarioDoc {
    ScenarioDoc {
        common: CommonDoc {
            carrier_hz: 28e9,
            subcarrier_spacing_hz: 120e3,
            active_subcarriers: 3168,
            symbols_per_frame: 1120,
            cyclic_prefix_s: None,
            symbol_duration_s: Some(DEFAULT_SYMBOL_DURATION_S),
            power_per_subcarrier_dbm: -5.0,
            noise_psd_w_per_hz: 4e-20,
            tx_antennas: 50,
            rx_antennas: 50,
            tx_element_gain: 1.0,
            rx_element_gain: 1.0,
        },
        stage1: Stage1Doc {
            directions: 50,
            symbols_per_direction: 22,
            bandwidth_fraction: 1.0,
            power_fraction: 0.1,
            scan_half_sector_deg: 60.0,
            range_padding: Some(4096),
            doppler_padding: Some(256),
            far: 1e-3,
        },
        stage2: Stage2Doc {
            directions: 1,
            symbols_per_direction: 1,
            bandwidth_fraction: 1.0,
            power_fraction: 1.0,
            roi_side_m: 4.0,
            grid_step_x_m: 0.02,
            grid_step_y_m: 0.02,
            coarse_sigma_m: 0.70,
            taper_db: None,
            use_coarse_doppler: false,
            beam_cache: true,
        },
        base_stations: vec![
            StationDoc { position_m: [60.0, 0.0], orientation_rad: PI, comm_direction_deg: 45.0 },
            StationDoc { position_m: [-30.0, 52.0], orientation_rad: -PI / 3.0, comm_direction_deg: 45.0 },
            StationDoc { position_m: [-30.0, -52.0], orientation_rad: PI / 3.0, comm_direction_deg: 45.0 },
        ],
        target: TargetDoc { mean_rcs_m2: 1.0, velocity_mps: [0.0, 0.0] },
        simulation: SimulationDoc {
            trials: 250,
            seed: 1,
            fusion: FusionMethod::Weighted,
            roi_model: RoiModel::Coarse,
            trajectory_m: vec![[15.0, -20.0], [15.0, -10.0], [15.0, 0.0], [15.0, 10.0], [15.0, 20.0]],
            full_stage1_cube: false,
        },
    }
}

pub fn reference_scenario() -> Scenario {
    Scenario::from_doc(&reference_doc()).expect("reference scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_document_is_valid() {
        let s = reference_scenario();
        assert_eq!(s.stage1.sensing_subcarriers, 3168);
        assert_eq!(s.stage2.sensing_symbols, 1);
        assert_relative_eq!(s.stage1.power_per_subcarrier_w, 3.1623e-4, max_relative = 1e-4);
        assert_relative_eq!(s.stage1.symbol_duration_s(), 8.92e-6, max_relative = 1e-12);
        assert_eq!(s.stations.len(), 3);
    }

    #[test]
    fn zero_subcarrier_spacing_is_rejected() {
        let mut doc = reference_doc();
        doc.common.subcarrier_spacing_hz = 0.0;
        let err = Scenario::from_doc(&doc).unwrap_err();
        assert_eq!(err.to_string(), "common.subcarrier_spacing_hz: subcarrier spacing must be positive");
    }

    #[test]
    fn bandwidth_fraction_rounds_half_up() {
        assert_eq!(sensing_subcarriers(0.6, 3168), 1901);
        assert_eq!(sensing_subcarriers(0.5, 3), 2);
        let s = reference_scenario().with_stage2_bandwidth(0.6).unwrap();
        assert_eq!(s.stage2.sensing_subcarriers, 1901);
    }

    #[test]
    fn reference_constants() {
        let s = reference_scenario();
        let d = s.stage1_constants(0).unwrap();
        assert_relative_eq!(d.angle_step_rad.to_degrees(), 120.0 / 49.0, max_relative = 1e-12);
        assert_relative_eq!(d.range_bin_m, 0.30518, max_relative = 1e-4);
        assert_eq!(d.range_rows, 289);
        assert_eq!(d.search_space, 14450);
        assert_relative_eq!(d.noise_variance, 4.8e-15, max_relative = 1e-12);
        assert_relative_eq!(d.threshold_w, 4.8e-15 * (1.445e7f64).ln(), max_relative = 1e-12);
        assert_relative_eq!(d.threshold_w, 7.91e-14, max_relative = 1e-3);
    }

    #[test]
    fn scan_needs_two_directions() {
        let s = reference_scenario();
        let mut f = s.stage1.clone();
        f.directions = 1;
        assert!(derived_constants(&f, &s.stations[0], 1e-3).is_err());
    }

    #[test]
    fn doubling_padding_halves_bin() {
        let s = reference_scenario();
        let mut f = s.stage1.clone();
        let w = f.range_bin_m();
        f.range_padding *= 2;
        assert_eq!(f.range_bin_m() * 2.0, w);
    }

    #[test]
    fn threshold_monotonicity() {
        let s2 = 4.8e-15;
        assert!(detection_threshold(s2, 200.0, 1e-3) > detection_threshold(s2, 100.0, 1e-3));
        assert!(detection_threshold(s2, 100.0, 1e-2) < detection_threshold(s2, 100.0, 1e-3));
        assert_eq!(detection_threshold(s2, 0.5, 0.5), 0.0);
    }

    #[test]
    fn non_integer_grid_is_rejected() {
        let mut doc = reference_doc();
        doc.stage2.grid_step_x_m = 0.03;
        let err = Scenario::from_doc(&doc).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "stage2.grid_step_x_m"));
    }

    #[test]
    fn padding_shorter_than_block_is_rejected() {
        let mut doc = reference_doc();
        doc.stage1.range_padding = Some(2048);
        let err = Scenario::from_doc(&doc).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "stage1.range_padding"));
    }

    #[test]
    fn document_round_trip() {
        let s = reference_scenario();
        let again = Scenario::from_doc(&s.to_doc()).unwrap();
        assert_eq!(s.stage1, again.stage1);
        assert_eq!(s.stations, again.stations);
        assert_eq!(s.sim, again.sim);
        // second trip is exact: the exported document is a fixed point
        assert_eq!(again.to_doc(), Scenario::from_doc(&again.to_doc()).unwrap().to_doc());
    }

    #[test]
    fn scaling_shrinks_bandwidth_and_grid() {
        let s = reference_scenario().scaled(4.0).unwrap();
        assert_eq!(s.stage1.sensing_subcarriers, 792);
        assert_eq!(s.stage1.range_padding, 1024);
        assert_relative_eq!(s.sim.grid_step_x_m, 0.08);
        assert_eq!(s.sim.grid_points_x(), 51);
    }
}
