//! Acceptance criteria. Each test prints one `ACCEPTANCE <n> ... PASS|FAIL`
//! line and then asserts the criterion.
//!
//! Run with `cargo test -p isacnet-core --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isacnet_core::channel::{echo_params, simulate_stage2_rx, TargetState};
use isacnet_core::config::{reference_doc, reference_scenario, FusionMethod, Scenario};
use isacnet_core::fusion::{fuse, fuse_wls, normalize_intensities, CoarseMeasurement};
use isacnet_core::geometry::{global_to_local, local_polar_to_global, GlobalPoint};
use isacnet_core::montecarlo::{run_campaign, scan_station, trial_rng, CampaignMetrics, StageSelection};
use isacnet_core::refine::{build_likelihood_map, estimate_position, LikelihoodOptions, Roi, StationData};
use isacnet_core::sensing::{peak_detection, periodogram, PeriodogramPlan};
use isacnet_core::channel::TimeFreqGrid;
use isacnet_core::{BsDescriptor, Error};

/// Criteria run one at a time so each runtime is measured on its own.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    println!(
        "ACCEPTANCE {id} {name}: {} ({detail}; {:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// 1. FAR calibration
// ---------------------------------------------------------------------------

#[test]
fn a1_false_alarm_rate() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut doc = reference_doc();
    doc.common.active_subcarriers = 256;
    doc.stage1.range_padding = Some(512);
    doc.stage1.doppler_padding = None;
    let s = Scenario::from_doc(&doc).unwrap();
    assert_eq!((s.stage1.sensing_subcarriers, s.stage1.sensing_symbols), (256, 22));
    let plan = PeriodogramPlan::for_frame(&s.stage1);
    let eta = s.stage1_constants(0).unwrap().threshold_w;
    let maps = 5000usize;
    let alarms: usize = (0..maps)
        .map(|i| {
            let mut rng = trial_rng(0xFA, 0, i);
            let map = scan_station(&s, 0, &[], &plan, &mut rng).unwrap();
            peak_detection(&map, eta, 0).is_some() as usize
        })
        .sum();
    let far = s.sim.far;
    let rate = alarms as f64 / maps as f64;
    let half = 1.96 * (far * (1.0 - far) / maps as f64).sqrt();
    let elapsed = start.elapsed();
    let pass = (rate - far).abs() <= half && elapsed <= Duration::from_secs(120);
    report(
        1,
        "FAR calibration",
        pass,
        &format!(
            "{alarms}/{maps} maps alarmed, rate {rate:.2e}, CI [{:.2e}, {:.2e}], |Ω| = {}",
            far - half,
            far + half,
            s.stage1_constants(0).unwrap().search_space
        ),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Periodogram oracle
// ---------------------------------------------------------------------------

fn tone(k_s: usize, m_s: usize, q: f64, p: f64, k_p: usize, m_p: usize) -> TimeFreqGrid {
    let mut g = TimeFreqGrid::zeros(k_s, m_s);
    for m in 0..m_s {
        for k in 0..k_s {
            let ph = -2.0 * PI * k as f64 * q / k_p as f64 + 2.0 * PI * m as f64 * p / m_p as f64;
            g.set(k, m, Complex64::from_polar(1.0, ph));
        }
    }
    g
}

#[test]
fn a2_periodogram_oracle() {
    let _guard = exclusive();
    let start = Instant::now();
    let (k_s, m_s, k_p, m_p) = (256, 22, 512, 64);
    let mut ok = true;
    let mut worst = 0.0f64;
    for (q, p) in [(0.0, 0.0), (37.0, 5.0), (100.0, 63.0), (511.0, 32.0)] {
        let map = periodogram(&tone(k_s, m_s, q, p, k_p, m_p), k_p, m_p).unwrap();
        let (qq, pp, v) = map.peak();
        let rel = (v / (k_s * m_s) as f64 - 1.0).abs();
        worst = worst.max(rel);
        ok &= (qq, pp) == (q as usize, p as usize) && rel <= 1e-9;
    }
    for (q, p) in [(37.3, 5.2), (100.45, 10.7), (200.6, 40.4)] {
        let map = periodogram(&tone(k_s, m_s, q, p, k_p, m_p), k_p, m_p).unwrap();
        let (qq, pp, _) = map.peak();
        ok &= qq == (q as f64).round() as usize && pp == (p as f64).round() as usize;
    }
    report(2, "periodogram oracle", ok, &format!("worst on-bin relative error {worst:.1e}"), start.elapsed());
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Geometry oracle
// ---------------------------------------------------------------------------

#[test]
fn a3_geometry_oracle() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let bs = BsDescriptor::new(
            GlobalPoint::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)),
            rng.random_range(-PI..PI),
        );
        let p = GlobalPoint::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        if p.distance(&bs.position) < 1e-3 {
            continue;
        }
        let back = local_polar_to_global(&global_to_local(&p, &bs).unwrap(), &bs);
        worst = worst.max(back.distance(&p));
    }
    let s = reference_scenario();
    let target = GlobalPoint::new(15.0, -20.0);
    let l1 = global_to_local(&target, &s.stations[0]).unwrap();
    let (x1, y1) = l1.local_xy();
    let l2 = global_to_local(&target, &s.stations[1]).unwrap();
    let ok = worst < 1e-9
        && close(x1, 45.0, 1e-3)
        && close(y1, 20.0, 1e-3)
        && close(l1.range_m, 49.244, 1e-3)
        && close(l2.range_m, 84.906, 1e-3);
    report(
        3,
        "geometry oracle",
        ok,
        &format!("worst round trip {worst:.1e} m, r1 {:.4} m, r2 {:.4} m", l1.range_m, l2.range_m),
        start.elapsed(),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. Noiseless coarse estimators
// ---------------------------------------------------------------------------

#[test]
fn a4_noiseless_fusion() {
    let _guard = exclusive();
    let start = Instant::now();
    let s = reference_scenario();
    let target = GlobalPoint::new(15.0, -20.0);
    let mut ms: Vec<CoarseMeasurement> = s
        .stations
        .iter()
        .enumerate()
        .map(|(i, b)| CoarseMeasurement::new(i, b, global_to_local(&target, b).unwrap(), [1.0, 0.4, 0.7][i]))
        .collect();
    normalize_intensities(&mut ms);
    let mut worst = 0.0f64;
    for m in FusionMethod::ALL {
        worst = worst.max(fuse(m, &ms).unwrap().point.distance(&target));
    }
    let single = fuse_wls(&ms[..1]);
    let ok = worst < 1e-6 && matches!(single, Err(Error::InsufficientMeasurements { .. }));
    report(4, "noiseless fusion", ok, &format!("worst error {worst:.1e} m, WLS N=1 -> {single:?}"), start.elapsed());
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. Stage-2 exactness
// ---------------------------------------------------------------------------

#[test]
fn a5_stage2_exactness() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut doc = reference_doc();
    doc.stage2.bandwidth_fraction = 256.0 / 3168.0;
    let s = Scenario::from_doc(&doc).unwrap();
    assert_eq!(s.stage2.sensing_subcarriers, 256);
    let frame = &s.stage2;
    let step = s.sim.grid_step_x_m;
    let target = GlobalPoint::new(15.0, -20.0);
    let mut hits = 0;
    let trials = 100;
    for t in 0..trials {
        let mut rng = trial_rng(5, 0, t);
        // RoI centre offset by a whole number of cells keeps the target on the grid
        let (ox, oy) = (rng.random_range(-60i32..=60), rng.random_range(-60i32..=60));
        let center = GlobalPoint::new(target.x + ox as f64 * step, target.y + oy as f64 * step);
        let roi = Roi::new(center, s.sim.roi_side_m, step, step);
        let state = TargetState { position: target, velocity_mps: [0.0, 0.0], mean_rcs_m2: 1.0 };
        let blocks: Vec<_> = s
            .stations
            .iter()
            .map(|b| {
                let e = echo_params(&state, b, frame, 1.0).unwrap();
                let h = Complex64::from_polar(1e-7, rng.random_range(0.0..2.0 * PI));
                simulate_stage2_rx(frame, b.rx_antennas, &[(e, h)], 0.0, &mut rng)
            })
            .collect();
        let data: Vec<StationData> = s
            .stations
            .iter()
            .zip(&blocks)
            .map(|(station, rx)| StationData { station, rx, doppler_hz: 0.0 })
            .collect();
        let map = build_likelihood_map(&roi, &data, frame, &LikelihoodOptions::default()).unwrap();
        assert_eq!((map.nx, map.ny), (201, 201));
        let est = estimate_position(&map).unwrap();
        if est.point.distance(&target) < 1e-6 {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = hits == trials && elapsed < Duration::from_secs(300);
    report(5, "Stage-2 ML exactness", ok, &format!("{hits}/{trials} trials at the true grid point"), elapsed);
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6 and 7. Desk-scale campaigns
// ---------------------------------------------------------------------------

/// Desk-scale scenario: K = 792 active subcarriers, everything else as in
/// the reference scenario (K_p = 4096, 2 cm grid), 100 trials at 5 points.
fn desk_scale(rho_f: f64) -> Scenario {
    let mut doc = reference_doc();
    doc.common.active_subcarriers = 792;
    doc.stage2.bandwidth_fraction = rho_f;
    doc.simulation.trials = 100;
    doc.simulation.seed = 2024;
    Scenario::from_doc(&doc).unwrap()
}

struct Campaign {
    metrics: CampaignMetrics,
    elapsed: Duration,
}

fn full_campaign() -> &'static Campaign {
    static C: OnceLock<Campaign> = OnceLock::new();
    C.get_or_init(|| {
        let start = Instant::now();
        let (_, metrics) = run_campaign(&desk_scale(1.0), StageSelection::All).unwrap();
        Campaign { metrics, elapsed: start.elapsed() }
    })
}

#[test]
fn a6_desk_scale_detection() {
    let _guard = exclusive();
    let c = full_campaign();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in &c.metrics.points {
        ok &= p.pd_cooperative >= 0.99 && p.pd_single.iter().all(|s| *s >= 0.95);
        detail.push(format!(
            "y={:+.0}: coop {:.2}, single [{}]",
            p.point.y,
            p.pd_cooperative,
            p.pd_single.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")
        ));
    }
    ok &= c.elapsed <= Duration::from_secs(600);
    report(6, "desk-scale detection probability", ok, &detail.join("; "), c.elapsed);
    assert!(ok);
}

#[test]
fn a7_desk_scale_accuracy_ordering() {
    let _guard = exclusive();
    let start = Instant::now();
    let c = full_campaign();
    let m = &c.metrics;
    let (_, reduced) = run_campaign(&desk_scale(0.6), StageSelection::All).unwrap();
    let single_p80 = m.single_overall.p80_m.unwrap_or(f64::INFINITY);
    let rmse = |name: &str| m.mean_rmse(name).unwrap_or(f64::INFINITY);
    let (simple, weighted, wls, refined) = (rmse("simple"), rmse("weighted"), rmse("wls"), rmse("refined"));
    let refined_06 = reduced.mean_rmse("refined").unwrap_or(f64::INFINITY);
    let best_coarse = simple.min(weighted).min(wls);
    let i = single_p80 <= 1.5;
    let ii = simple / weighted >= 1.5 && simple / wls >= 1.5;
    let iii = best_coarse / refined >= 5.0 && refined <= refined_06;
    let elapsed = c.elapsed + start.elapsed();
    let ok = i && ii && iii && elapsed <= Duration::from_secs(1200);
    report(
        7,
        "desk-scale accuracy ordering",
        ok,
        &format!(
            "(i) single p80 {single_p80:.3} m [{}]; (ii) RMSE simple {simple:.3} / weighted {weighted:.3} / wls {wls:.3} m [{}]; \
             (iii) refined {refined:.4} m (ρ_f=0.6: {refined_06:.4} m), gain {:.1}x [{}]",
            if i { "ok" } else { "miss" },
            if ii { "ok" } else { "miss" },
            best_coarse / refined,
            if iii { "ok" } else { "miss" },
        ),
        elapsed,
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 8. Invariant suite
// ---------------------------------------------------------------------------

#[test]
fn a8_invariants() {
    use isacnet_core::array::{stage1_multibeam, stage2_sector_beam};
    use isacnet_core::fusion::{solve_rows, wls_rows, WlsRow};
    use isacnet_core::refine::t_matrix_apply;
    use isacnet_core::channel::qpsk_symbols;

    let _guard = exclusive();
    let start = Instant::now();
    let s = reference_scenario();
    let p = s.stage1.power_per_subcarrier_w;
    let mut checks: Vec<(&str, bool)> = Vec::new();

    // transmit power: orthogonal Stage-1 case and Stage-2 sector beams
    let n = 50;
    let theta_s = 0.2f64;
    let theta_c = (theta_s.sin() + 2.0 / n as f64).asin();
    let w = stage1_multibeam(theta_s, theta_c, 0.1, p, n).unwrap();
    checks.push(("stage-1 power", (w.norm_sqr() / p - 1.0).abs() < 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sector_ok = true;
    for _ in 0..20 {
        let lo = rng.random_range(-1.0..0.9);
        let hi = lo + rng.random_range(0.01..0.3);
        let b = stage2_sector_beam(lo, hi, p, n).unwrap();
        sector_ok &= (b.beam.norm_sqr() / p - 1.0).abs() < 1e-9;
    }
    checks.push(("stage-2 power", sector_ok));

    // T is an isometry
    let frame = &s.stage2;
    let x = qpsk_symbols(frame.sensing_subcarriers, frame.sensing_symbols, &mut rng).data;
    let e: f64 = x.iter().map(|v| v.norm_sqr()).sum();
    let mut iso = true;
    for _ in 0..10 {
        let tx = t_matrix_apply(&x, rng.random_range(0.0..1e-6), rng.random_range(-2e3..2e3), frame).unwrap();
        iso &= (tx.iter().map(|v| v.norm_sqr()).sum::<f64>() / e - 1.0).abs() < 1e-12;
    }
    checks.push(("T isometry", iso));

    // fused map is the sum of per-station maps
    let mut doc = reference_doc();
    doc.stage2.bandwidth_fraction = 0.05;
    let s2 = Scenario::from_doc(&doc).unwrap();
    let target = GlobalPoint::new(15.0, -20.0);
    let state = TargetState { position: target, velocity_mps: [0.0, 0.0], mean_rcs_m2: 1.0 };
    let blocks: Vec<_> = s2
        .stations
        .iter()
        .map(|b| {
            let e = echo_params(&state, b, &s2.stage2, 1.0).unwrap();
            simulate_stage2_rx(&s2.stage2, b.rx_antennas, &[(e, Complex64::new(1e-7, 0.0))], 1e-15, &mut rng)
        })
        .collect();
    let data: Vec<StationData> = s2
        .stations
        .iter()
        .zip(&blocks)
        .map(|(station, rx)| StationData { station, rx, doppler_hz: 0.0 })
        .collect();
    let roi = Roi::new(target, 0.4, 0.02, 0.02);
    let all = build_likelihood_map(&roi, &data, &s2.stage2, &LikelihoodOptions::default()).unwrap();
    let a = build_likelihood_map(&roi, &data[..1], &s2.stage2, &LikelihoodOptions::default()).unwrap();
    let b = build_likelihood_map(&roi, &data[1..], &s2.stage2, &LikelihoodOptions::default()).unwrap();
    let additive = all
        .fused
        .iter()
        .zip(a.fused.iter().zip(&b.fused))
        .all(|(f, (x, y))| (f - (x + y)).abs() <= 1e-12 * f.abs().max(1e-300));
    checks.push(("map additivity", additive));

    // cooperative Pd dominates single-station Pd
    let mut cdoc = reference_doc();
    cdoc.common.active_subcarriers = 256;
    cdoc.stage1.range_padding = Some(512);
    cdoc.simulation.trials = 6;
    cdoc.target.mean_rcs_m2 = 0.05;
    let cs = Scenario::from_doc(&cdoc).unwrap();
    let (_, cm) = run_campaign(&cs, StageSelection::Coarse).unwrap();
    checks.push((
        "Pd cooperative >= single",
        cm.points.iter().all(|p| p.pd_single.iter().all(|s| *s <= p.pd_cooperative)),
    ));

    // WLS argmin invariant under W -> cW
    let mut ms: Vec<CoarseMeasurement> = s
        .stations
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut lp = global_to_local(&target, b).unwrap();
            lp.range_m += rng.random_range(-0.5..0.5);
            lp.angle_rad += rng.random_range(-0.02..0.02);
            CoarseMeasurement::new(i, b, lp, rng.random_range(0.1..1.0))
        })
        .collect();
    normalize_intensities(&mut ms);
    let rows = wls_rows(&ms);
    let base = solve_rows(&rows).unwrap();
    let mut inv = true;
    for c in [1e-6, 0.3, 7.0, 1e5] {
        let scaled: Vec<WlsRow> = rows.iter().map(|r| WlsRow { weight: r.weight * c, ..*r }).collect();
        inv &= solve_rows(&scaled).unwrap().distance(&base) < 1e-9;
    }
    checks.push(("WLS scaling invariance", inv));

    let ok = checks.iter().all(|(_, v)| *v);
    let detail = checks
        .iter()
        .map(|(n, v)| format!("{n} {}", if *v { "ok" } else { "miss" }))
        .collect::<Vec<_>>()
        .join(", ");
    report(8, "invariant suite", ok, &detail, start.elapsed());
    assert!(ok);
}
