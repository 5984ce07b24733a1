//! End-to-end Monte Carlo trials and campaign metrics.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{receive_beamformer, stage1_multibeam, stage2_sector_beam};
use crate::channel::{draw_rcs, echo_params, simulate_stage1_rx, simulate_stage2_rx, EchoParams, Stage1Synthesizer, Stage2Rx, TargetState};
use crate::config::{FusionMethod, RoiModel, Scenario};
use crate::error::{Error, Result};
use crate::fusion::{fuse, normalize_intensities, CoarseMeasurement, FusionOutcome};
use crate::geometry::{global_to_local, GlobalPoint};
use crate::refine::{build_likelihood_map, estimate_position, LikelihoodMap, LikelihoodOptions, Roi, StationData};
use crate::sensing::{divide_symbols, peak_detection, reciprocal_filter, Detection, MapGeometry, PeriodogramPlan, RangeAngleMap};

/// Which stages a trial executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageSelection {
    /// Stage 1 and coarse fusion only.
    Coarse,
    /// Stage 2 only, with the RoI drawn around the true position.
    Refined,
    All,
}

/// Stage-1 scan of one station: every direction's range-angle column.
///
/// `echoes` may be empty for noise-only maps.
pub fn scan_station<R: Rng + ?Sized>(
    scenario: &Scenario,
    bs: usize,
    echoes: &[EchoParams],
    plan: &PeriodogramPlan,
    rng: &mut R,
) -> Result<RangeAngleMap> {
    let frame = &scenario.stage1;
    let station = &scenario.stations[bs];
    let constants = scenario.stage1_constants(bs)?;
    let geometry = MapGeometry::new(frame, &constants, station.scan_half_sector_rad);
    let mut map = RangeAngleMap::new(constants.range_rows, frame.directions, geometry);
    let synth = Stage1Synthesizer::new(frame, echoes);
    for j in 0..frame.directions {
        let theta = geometry.angle_rad(j);
        let tx = stage1_multibeam(
            theta,
            station.comm_direction_rad,
            frame.power_fraction,
            frame.power_per_subcarrier_w,
            station.tx_antennas,
        )?;
        let rx_beam = receive_beamformer(theta, station.rx_antennas, None);
        let filtered = if scenario.sim.full_stage1_cube {
            let rx = simulate_stage1_rx(frame, station, echoes, &tx, constants.noise_variance, rng);
            reciprocal_filter(&rx, &rx_beam)?
        } else {
            let (symbols, y) = synth.beamformed(&tx, &rx_beam, constants.noise_variance, rng);
            divide_symbols(&y, &symbols)?
        };
        let mut rd = plan.compute(&filtered, constants.range_rows)?;
        rd.direction = j;
        map.set_direction(j, &rd)?;
    }
    Ok(map)
}

/// Per-station outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationResult {
    pub detected: bool,
    /// Back-projected single-station estimate.
    pub estimate: Option<GlobalPoint>,
    pub peak_w: Option<f64>,
    pub doppler_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseResult {
    pub method: FusionMethod,
    pub estimate: GlobalPoint,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub point: usize,
    pub target: GlobalPoint,
    pub stations: Vec<StationResult>,
    pub coarse: Vec<CoarseResult>,
    pub roi_center: Option<GlobalPoint>,
    pub refined: Option<GlobalPoint>,
}

impl TrialResult {
    /// At least one station detected the target.
    pub fn detected(&self) -> bool {
        self.stations.iter().any(|s| s.detected)
    }

    pub fn coarse_error(&self, method: FusionMethod) -> Option<f64> {
        self.coarse
            .iter()
            .find(|c| c.method == method)
            .map(|c| c.estimate.distance(&self.target))
    }

    pub fn station_error(&self, bs: usize) -> Option<f64> {
        self.stations[bs].estimate.map(|p| p.distance(&self.target))
    }

    pub fn refined_error(&self) -> Option<f64> {
        self.refined.map(|p| p.distance(&self.target))
    }
}

/// Maps retained from a trial for export.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub range_angle: Vec<RangeAngleMap>,
    pub likelihood: Option<LikelihoodMap>,
    pub stage2_rx: Vec<Stage2Rx>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub stages: StageSelection,
    pub keep_artifacts: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { stages: StageSelection::All, keep_artifacts: false }
    }
}

/// Independent stream per `(point, trial)` derived from the campaign seed.
pub fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// Local angles of the RoI corners as seen from a station, `(min, max)`.
fn roi_sector(roi: &Roi, station: &crate::config::BsDescriptor) -> Result<(f64, f64)> {
    let (nx, ny) = (roi.nx() - 1, roi.ny() - 1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (r, c) in [(0, 0), (0, nx), (ny, 0), (ny, nx)] {
        let a = global_to_local(&roi.point(r, c), station)?.angle_rad;
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Ok((lo, hi))
}

fn stage2<R: Rng + ?Sized>(
    scenario: &Scenario,
    target: &TargetState,
    rcs: &[f64],
    roi: &Roi,
    dopplers: &[f64],
    rng: &mut R,
) -> Result<(LikelihoodMap, Vec<Stage2Rx>)> {
    let frame = &scenario.stage2;
    let p_avg = frame.power_fraction * frame.power_per_subcarrier_w;
    let noise = frame.noise_variance();
    let mut blocks = Vec::with_capacity(scenario.stations.len());
    for (i, station) in scenario.stations.iter().enumerate() {
        let (lo, hi) = roi_sector(roi, station)?;
        let sector = stage2_sector_beam(lo, hi, p_avg, station.tx_antennas)?;
        let echo = echo_params(target, station, frame, rcs[i])?;
        let h: Complex64 = echo.composite_gain(p_avg, sector.gamma(echo.angle_rad));
        blocks.push(simulate_stage2_rx(frame, station.rx_antennas, &[(echo, h)], noise, rng));
    }
    let data: Vec<StationData> = scenario
        .stations
        .iter()
        .zip(&blocks)
        .zip(dopplers)
        .map(|((station, rx), d)| StationData { station, rx, doppler_hz: *d })
        .collect();
    let options = LikelihoodOptions { beam_cache: scenario.sim.beam_cache, taper_db: scenario.sim.taper_db };
    let map = build_likelihood_map(roi, &data, frame, &options)?;
    Ok((map, blocks))
}

/// One trial at trajectory point `point`.
pub fn run_trial(
    scenario: &Scenario,
    point: usize,
    trial: usize,
    options: &RunOptions,
) -> Result<(TrialResult, Option<TrialArtifacts>)> {
    let annotate = |e: Error| Error::Trial { trial, point, source: Box::new(e) };
    let mut rng = trial_rng(scenario.sim.seed, point, trial);
    let position = scenario.sim.trajectory[point];
    let target = TargetState {
        position,
        velocity_mps: scenario.target.velocity_mps,
        mean_rcs_m2: scenario.target.mean_rcs_m2,
    };
    let n_bs = scenario.stations.len();
    let rcs: Vec<f64> = (0..n_bs).map(|_| draw_rcs(target.mean_rcs_m2, &mut rng)).collect();
    let mut result = TrialResult {
        trial,
        point,
        target: position,
        stations: Vec::with_capacity(n_bs),
        coarse: Vec::new(),
        roi_center: None,
        refined: None,
    };
    let mut artifacts = TrialArtifacts { range_angle: Vec::new(), likelihood: None, stage2_rx: Vec::new() };

    let mut dopplers = vec![0.0; n_bs];
    if options.stages != StageSelection::Refined {
        let plan = PeriodogramPlan::for_frame(&scenario.stage1);
        let mut measurements = Vec::new();
        for (i, station) in scenario.stations.iter().enumerate() {
            let echo = echo_params(&target, station, &scenario.stage1, rcs[i]).map_err(annotate)?;
            let map = scan_station(scenario, i, &[echo], &plan, &mut rng).map_err(annotate)?;
            let eta = scenario.stage1_constants(i).map_err(annotate)?.threshold_w;
            let det: Option<Detection> = peak_detection(&map, eta, i);
            let sr = match det {
                Some(d) => {
                    let m = CoarseMeasurement::new(i, station, d.polar(), d.intensity_w);
                    measurements.push(m);
                    if scenario.sim.use_coarse_doppler {
                        dopplers[i] = d.doppler_hz;
                    }
                    StationResult {
                        detected: true,
                        estimate: Some(m.point),
                        peak_w: Some(d.intensity_w),
                        doppler_hz: Some(d.doppler_hz),
                    }
                }
                None => StationResult { detected: false, estimate: None, peak_w: None, doppler_hz: None },
            };
            result.stations.push(sr);
            if options.keep_artifacts {
                artifacts.range_angle.push(map);
            }
        }
        normalize_intensities(&mut measurements);
        if !measurements.is_empty() {
            for method in FusionMethod::ALL {
                let FusionOutcome { point, fallback } = fuse(method, &measurements).map_err(annotate)?;
                result.coarse.push(CoarseResult { method, estimate: point, fallback });
            }
        }
    } else {
        result.stations = vec![
            StationResult { detected: true, estimate: None, peak_w: None, doppler_hz: None };
            n_bs
        ];
    }

    if options.stages != StageSelection::Coarse && result.detected() {
        let gaussian = options.stages == StageSelection::Refined || scenario.sim.roi_model == RoiModel::Gaussian;
        let center = if gaussian {
            let sd = scenario.sim.coarse_sigma_m / std::f64::consts::SQRT_2;
            let n = Normal::new(0.0, sd).map_err(|e| annotate(Error::config("stage2.coarse_sigma_m", e.to_string())))?;
            GlobalPoint::new(position.x + n.sample(&mut rng), position.y + n.sample(&mut rng))
        } else {
            result
                .coarse
                .iter()
                .find(|c| c.method == scenario.sim.fusion)
                .map(|c| c.estimate)
                .expect("coarse estimates exist when a station detected")
        };
        let roi = Roi::new(center, scenario.sim.roi_side_m, scenario.sim.grid_step_x_m, scenario.sim.grid_step_y_m);
        let (map, blocks) = stage2(scenario, &target, &rcs, &roi, &dopplers, &mut rng).map_err(annotate)?;
        let est = estimate_position(&map).map_err(annotate)?;
        result.roi_center = Some(center);
        result.refined = Some(est.point);
        if options.keep_artifacts {
            artifacts.likelihood = Some(map);
            artifacts.stage2_rx = blocks;
        }
    }
    Ok((result, options.keep_artifacts.then_some(artifacts)))
}

/// Runs `scenario.sim.trials` trials at every trajectory point in parallel.
/// Results are ordered by `(point, trial)` and do not depend on the number
/// of worker threads.
pub fn run_trials(scenario: &Scenario, stages: StageSelection) -> Result<Vec<TrialResult>> {
    let n_points = scenario.sim.trajectory.len();
    let trials = scenario.sim.trials;
    if trials == 0 {
        return Err(Error::config("simulation.trials", "must be at least 1"));
    }
    let options = RunOptions { stages, keep_artifacts: false };
    (0..n_points * trials)
        .into_par_iter()
        .map(|i| run_trial(scenario, i / trials, i % trials, &options).map(|r| r.0))
        .collect()
}

/// Error statistics of one estimator at one trajectory point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    /// Fraction of trials with an estimate from this method.
    pub pd: f64,
    pub rmse_m: Option<f64>,
    pub p20_m: Option<f64>,
    pub p50_m: Option<f64>,
    pub p80_m: Option<f64>,
    pub n_det: usize,
}

impl MethodMetrics {
    pub fn from_errors(method: impl Into<String>, errors: &[f64], trials: usize) -> Self {
        let pct = |q| percentile(errors, q);
        Self {
            method: method.into(),
            pd: errors.len() as f64 / trials as f64,
            rmse_m: rmse(errors),
            p20_m: pct(0.2),
            p50_m: pct(0.5),
            p80_m: pct(0.8),
            n_det: errors.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub point: GlobalPoint,
    pub trials: usize,
    pub pd_cooperative: f64,
    pub pd_single: Vec<f64>,
    /// Per station (`bs1`, ...), pooled single-station (`single`), fusion
    /// methods and `refined`.
    pub methods: Vec<MethodMetrics>,
    pub wls_fallbacks: usize,
}

impl PointMetrics {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetrics {
    pub points: Vec<PointMetrics>,
    /// Mean over trajectory points of each method's RMSE (points without
    /// detections are skipped).
    pub mean_rmse_m: Vec<(String, f64)>,
    /// Pooled single-station errors over all points and stations.
    pub single_overall: MethodMetrics,
}

impl CampaignMetrics {
    pub fn mean_rmse(&self, name: &str) -> Option<f64> {
        self.mean_rmse_m.iter().find(|(m, _)| m == name).map(|(_, v)| *v)
    }
}

/// `√(Σ e² / N)`, `None` for no samples.
pub fn rmse(errors: &[f64]) -> Option<f64> {
    (!errors.is_empty()).then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Linearly interpolated percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn station_label(bs: usize) -> String {
    format!("bs{}", bs + 1)
}

/// Aggregates trial results. `trajectory` fixes the point order.
pub fn summarize(trajectory: &[GlobalPoint], n_bs: usize, results: &[TrialResult]) -> CampaignMetrics {
    let mut sorted: Vec<&TrialResult> = results.iter().collect();
    sorted.sort_by_key(|r| (r.point, r.trial));
    let mut points = Vec::with_capacity(trajectory.len());
    let mut pooled_single = Vec::new();
    let mut pooled_trials = 0;
    for (pi, p) in trajectory.iter().enumerate() {
        let rs: Vec<&TrialResult> = sorted.iter().copied().filter(|r| r.point == pi).collect();
        let n = rs.len().max(1);
        let pd_single: Vec<f64> = (0..n_bs)
            .map(|b| rs.iter().filter(|r| r.stations.get(b).is_some_and(|s| s.detected)).count() as f64 / n as f64)
            .collect();
        let mut methods = Vec::new();
        let mut single = Vec::new();
        for b in 0..n_bs {
            let e: Vec<f64> = rs.iter().filter_map(|r| r.station_error(b)).collect();
            single.extend_from_slice(&e);
            methods.push(MethodMetrics::from_errors(station_label(b), &e, n));
        }
        methods.push(MethodMetrics::from_errors("single", &single, n * n_bs));
        pooled_single.extend_from_slice(&single);
        pooled_trials += n * n_bs;
        for m in FusionMethod::ALL {
            let e: Vec<f64> = rs.iter().filter_map(|r| r.coarse_error(m)).collect();
            methods.push(MethodMetrics::from_errors(m.name(), &e, n));
        }
        let e: Vec<f64> = rs.iter().filter_map(|r| r.refined_error()).collect();
        methods.push(MethodMetrics::from_errors("refined", &e, n));
        points.push(PointMetrics {
            point: *p,
            trials: rs.len(),
            pd_cooperative: rs.iter().filter(|r| r.detected()).count() as f64 / n as f64,
            pd_single,
            methods,
            wls_fallbacks: rs
                .iter()
                .flat_map(|r| &r.coarse)
                .filter(|c| c.method == FusionMethod::Wls && c.fallback)
                .count(),
        });
    }
    let mut mean_rmse_m = Vec::new();
    if let Some(first) = points.first() {
        for name in first.methods.iter().map(|m| m.method.clone()) {
            let v: Vec<f64> = points.iter().filter_map(|p| p.method(&name).and_then(|m| m.rmse_m)).collect();
            if !v.is_empty() {
                mean_rmse_m.push((name, v.iter().sum::<f64>() / v.len() as f64));
            }
        }
    }
    CampaignMetrics {
        points,
        mean_rmse_m,
        single_overall: MethodMetrics::from_errors("single", &pooled_single, pooled_trials.max(1)),
    }
}

/// Runs every trial and aggregates.
pub fn run_campaign(scenario: &Scenario, stages: StageSelection) -> Result<(Vec<TrialResult>, CampaignMetrics)> {
    let results = run_trials(scenario, stages)?;
    let metrics = summarize(&scenario.sim.trajectory, scenario.stations.len(), &results);
    Ok((results, metrics))
}
