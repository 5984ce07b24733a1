//! Uniform linear array responses and the beamformers of both stages.
//!
//! All arrays are half-wavelength ULAs referenced to the array centre, so
//! element `n` of `a(θ)` is `exp(iπ(n - (N-1)/2) sin θ)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Which stage/role a beam vector was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamStage {
    Stage1Transmit,
    Stage2Transmit,
    Receive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamVector {
    pub coefficients: Vec<Complex64>,
    pub stage: BeamStage,
    /// Nominal power `‖w‖²` the beam was scaled to, W (1 for receive beams).
    pub power_w: f64,
}

impl BeamVector {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Array gain `a(θ)ᴴ w` of this beam towards `θ`.
    pub fn gain(&self, theta: f64) -> Complex64 {
        response(&self.coefficients, theta)
    }
}

pub fn steering_vector(theta: f64, n: usize) -> Vec<Complex64> {
    let s = theta.sin();
    let mid = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| Complex64::from_polar(1.0, std::f64::consts::PI * (i as f64 - mid) * s))
        .collect()
}

/// Inner product `xᴴ y`.
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `a(θ)ᴴ w` without materializing `a(θ)`.
pub fn response(w: &[Complex64], theta: f64) -> Complex64 {
    let n = w.len();
    let psi = std::f64::consts::PI * theta.sin();
    let mid = (n as f64 - 1.0) / 2.0;
    // a_n* = exp(-iψ(n - mid)); walk the phasor instead of calling exp per element
    let step = Complex64::from_polar(1.0, -psi);
    let mut ph = Complex64::from_polar(1.0, psi * mid);
    let mut acc = Complex64::new(0.0, 0.0);
    for c in w {
        acc += ph * c;
        ph *= step;
    }
    acc
}

/// Stage-1 multibeam precoder sharing power between a sensing direction and
/// a communication direction.
pub fn stage1_multibeam(
    theta_sense: f64,
    theta_comm: f64,
    power_fraction: f64,
    p_avg: f64,
    n_t: usize,
) -> Result<BeamVector> {
    if !(0.0..=1.0).contains(&power_fraction) {
        return Err(Error::config("stage1.power_fraction", "must lie in [0, 1]"));
    }
    let gs = (power_fraction * p_avg / n_t as f64).sqrt();
    let gc = ((1.0 - power_fraction) * p_avg / n_t as f64).sqrt();
    let a_s = steering_vector(theta_sense, n_t);
    let coefficients = if gc == 0.0 {
        a_s.into_iter().map(|v| v * gs).collect()
    } else {
        let a_c = steering_vector(theta_comm, n_t);
        a_s.iter().zip(&a_c).map(|(s, c)| s * gs + c * gc).collect()
    };
    Ok(BeamVector {
        coefficients,
        stage: BeamStage::Stage1Transmit,
        power_w: p_avg,
    })
}

/// Receive beamformer `b(θ)/√N_R`, optionally Dolph-Chebyshev tapered and
/// renormalized to unit norm.
pub fn receive_beamformer(theta: f64, n_r: usize, taper_db: Option<f64>) -> BeamVector {
    let mut b = steering_vector(theta, n_r);
    if let Some(db) = taper_db {
        for (c, t) in b.iter_mut().zip(chebyshev_window(n_r, db)) {
            *c *= t;
        }
    }
    let norm = b.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    for c in &mut b {
        *c /= norm;
    }
    BeamVector {
        coefficients: b,
        stage: BeamStage::Receive,
        power_w: 1.0,
    }
}

/// Dolph-Chebyshev window of length `n` with sidelobes `sidelobe_db` below the
/// main lobe, peak-normalized to 1.
pub fn chebyshev_window(n: usize, sidelobe_db: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![1.0; n];
    }
    let order = (n - 1) as f64;
    let beta = ((10f64.powf(sidelobe_db.abs() / 20.0)).acosh() / order).cosh();
    let nf = n as f64;
    // Chebyshev polynomial sampled on the unit circle, then a real DFT
    let p: Vec<f64> = (0..n)
        .map(|k| {
            let x = beta * (std::f64::consts::PI * k as f64 / nf).cos();
            if x > 1.0 {
                (order * x.acosh()).cosh()
            } else if x < -1.0 {
                let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
                sign * (order * (-x).acosh()).cosh()
            } else {
                (order * x.acos()).cos()
            }
        })
        .collect();
    let dft_re = |spec: &dyn Fn(usize) -> Complex64, i: usize| -> f64 {
        (0..n)
            .map(|k| {
                let ang = -2.0 * std::f64::consts::PI * (i * k) as f64 / nf;
                (spec(k) * Complex64::from_polar(1.0, ang)).re
            })
            .sum()
    };
    let mut w = if n % 2 == 1 {
        let half = n.div_ceil(2);
        let spec = |k: usize| Complex64::new(p[k], 0.0);
        let w0: Vec<f64> = (0..half).map(|i| dft_re(&spec, i)).collect();
        w0[1..].iter().rev().chain(w0.iter()).copied().collect::<Vec<_>>()
    } else {
        let half = n / 2 + 1;
        let spec = |k: usize| Complex64::from_polar(p[k], std::f64::consts::PI * k as f64 / nf);
        let w0: Vec<f64> = (0..half).map(|i| dft_re(&spec, i)).collect();
        w0[1..].iter().rev().chain(w0[1..].iter()).copied().collect::<Vec<_>>()
    };
    let max = w.iter().cloned().fold(f64::MIN, f64::max);
    for v in &mut w {
        *v /= max;
    }
    w
}

/// Stage-2 sector beam and the pattern figures it achieved.
#[derive(Debug, Clone)]
pub struct SectorBeam {
    pub beam: BeamVector,
    /// Sector actually synthesized (widened to `2/N_T` if narrower).
    pub theta_min: f64,
    pub theta_max: f64,
    pub widened: bool,
    /// Mean in-sector amplitude gain `|γ|`.
    pub mean_gain: f64,
    /// Largest in-sector deviation from the mean gain, dB.
    pub ripple_db: f64,
    /// Peak gain outside the guard band relative to the mean gain, dB.
    pub sidelobe_db: f64,
}

/// Ripple bound of the sector-beam contract, dB.
pub const SECTOR_MAX_RIPPLE_DB: f64 = 3.0;
/// Sidelobe bound of the sector-beam contract, dB below the in-sector mean.
pub const SECTOR_MAX_SIDELOBE_DB: f64 = -15.0;

const SIDELOBE_GOAL_DB: f64 = -22.0;
const REWEIGHT_ITERATIONS: usize = 40;

impl SectorBeam {
    /// Normalized gain `γ(θ) = a(θ)ᴴ w / √P`.
    pub fn gamma(&self, theta: f64) -> Complex64 {
        self.beam.gain(theta) / self.beam.power_w.sqrt()
    }

    pub fn width(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn check(&self) -> Result<()> {
        if self.ripple_db <= SECTOR_MAX_RIPPLE_DB && self.sidelobe_db <= SECTOR_MAX_SIDELOBE_DB {
            Ok(())
        } else {
            Err(Error::SectorContract {
                ripple_db: self.ripple_db,
                sidelobe_db: self.sidelobe_db,
            })
        }
    }
}

/// Minimum synthesizable sector width `2/N_T`.
pub fn min_sector_width(n_t: usize) -> f64 {
    2.0 / n_t as f64
}

/// Flat-top transmit beam covering `[θ_min, θ_max]` with `‖w‖² = p_avg`.
///
/// Weighted least-squares fit of the array response to unit gain inside the
/// sector and zero gain outside a guard band of half the sector width on each
/// side. Stop-band weights are raised iteratively where the pattern exceeds
/// the sidelobe goal. The achieved ripple and sidelobe level are reported;
/// [`SectorBeam::check`] tests them against the contract.
pub fn stage2_sector_beam(theta_min: f64, theta_max: f64, p_avg: f64, n_t: usize) -> Result<SectorBeam> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    if !(theta_max > theta_min) || theta_min <= -half_pi || theta_max >= half_pi {
        return Err(Error::SectorOutOfRange { theta_min, theta_max });
    }
    let min_width = min_sector_width(n_t);
    let (lo, hi, widened) = if theta_max - theta_min < min_width {
        let mid = 0.5 * (theta_min + theta_max);
        (mid - 0.5 * min_width, mid + 0.5 * min_width, true)
    } else {
        (theta_min, theta_max, false)
    };
    if lo <= -half_pi || hi >= half_pi {
        return Err(Error::SectorOutOfRange { theta_min: lo, theta_max: hi });
    }
    let width = hi - lo;
    let guard_lo = (lo - 0.5 * width).max(-half_pi);
    let guard_hi = (hi + 0.5 * width).min(half_pi);

    let nf = n_t as f64;
    let n_in = ((width / (0.1 / nf)).ceil() as usize).max(32);
    let in_u: Vec<f64> = (0..n_in)
        .map(|i| (lo + width * i as f64 / (n_in - 1) as f64).sin())
        .collect();
    let (u_lo, u_hi) = (guard_lo.sin(), guard_hi.sin());
    let n_u = (16.0 * nf) as usize;
    let out_u: Vec<f64> = (0..=n_u)
        .map(|i| -1.0 + 2.0 * i as f64 / n_u as f64)
        .filter(|u| *u < u_lo || *u > u_hi)
        .collect();

    let w_in = 1.0 / n_in as f64;
    let mut w_out = vec![1.0 / out_u.len().max(1) as f64; out_u.len()];
    let mut v = solve_toeplitz_ls(n_t, &in_u, w_in, &out_u, &w_out)?;
    let goal = 10f64.powf(SIDELOBE_GOAL_DB / 20.0);
    for _ in 0..REWEIGHT_ITERATIONS {
        let mean_in = in_u.iter().map(|u| response_u(&v, *u).norm()).sum::<f64>() / n_in as f64;
        let mut worst = 0.0f64;
        for (u, w) in out_u.iter().zip(w_out.iter_mut()) {
            let g = response_u(&v, *u).norm() / mean_in;
            worst = worst.max(g);
            if g > goal {
                *w *= (g / goal).powi(2);
            }
        }
        if worst <= goal {
            break;
        }
        v = solve_toeplitz_ls(n_t, &in_u, w_in, &out_u, &w_out)?;
    }

    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let scale = p_avg.sqrt() / norm;
    let coefficients: Vec<Complex64> = v.iter().map(|c| c * scale).collect();
    let beam = BeamVector {
        coefficients,
        stage: BeamStage::Stage2Transmit,
        power_w: p_avg,
    };
    let (mean_gain, ripple_db, sidelobe_db) = pattern_figures(&beam, lo, hi, guard_lo, guard_hi);
    Ok(SectorBeam {
        beam,
        theta_min: lo,
        theta_max: hi,
        widened,
        mean_gain,
        ripple_db,
        sidelobe_db,
    })
}

fn response_u(w: &[Complex64], u: f64) -> Complex64 {
    response(w, u.asin())
}

/// Solves `(Σ ω a aᴴ) v = Σ_in ω a` using the Toeplitz structure of ULA
/// outer products: `[a(u) a(u)ᴴ]_{n,n'} = exp(iπ(n-n')u)`.
fn solve_toeplitz_ls(n: usize, in_u: &[f64], w_in: f64, out_u: &[f64], w_out: &[f64]) -> Result<Vec<Complex64>> {
    let pi = std::f64::consts::PI;
    let mid = (n as f64 - 1.0) / 2.0;
    let mut lags = vec![Complex64::new(0.0, 0.0); n];
    let mut rhs = DVector::<Complex64>::zeros(n);
    let mut accumulate = |u: f64, w: f64, target: bool| {
        let step = Complex64::from_polar(1.0, pi * u);
        let mut ph = Complex64::new(w, 0.0);
        for lag in lags.iter_mut() {
            *lag += ph;
            ph *= step;
        }
        if target {
            for (i, r) in rhs.iter_mut().enumerate() {
                *r += Complex64::from_polar(w, pi * (i as f64 - mid) * u);
            }
        }
    };
    for u in in_u {
        accumulate(*u, w_in, true);
    }
    for (u, w) in out_u.iter().zip(w_out) {
        accumulate(*u, *w, false);
    }
    let loading = 1e-10 * lags[0].re;
    let gram = DMatrix::<Complex64>::from_fn(n, n, |r, c| {
        if r >= c {
            lags[r - c] + if r == c { Complex64::new(loading, 0.0) } else { Complex64::new(0.0, 0.0) }
        } else {
            lags[c - r].conj()
        }
    });
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Solve("sector-beam Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// (mean in-sector |γ|, ripple dB, peak sidelobe dB re mean) on a fine grid.
fn pattern_figures(beam: &BeamVector, lo: f64, hi: f64, guard_lo: f64, guard_hi: f64) -> (f64, f64, f64) {
    let sqrt_p = beam.power_w.sqrt();
    let n_eval = 256;
    let gains: Vec<f64> = (0..n_eval)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / (n_eval - 1) as f64;
            beam.gain(t).norm() / sqrt_p
        })
        .collect();
    let mean = gains.iter().sum::<f64>() / n_eval as f64;
    let ripple = gains
        .iter()
        .map(|g| (20.0 * (g / mean).log10()).abs())
        .fold(0.0, f64::max);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let step = 2e-4;
    let mut peak = 0.0f64;
    let mut t = -half_pi;
    while t <= half_pi {
        if t < guard_lo || t > guard_hi {
            peak = peak.max(beam.gain(t).norm() / sqrt_p);
        }
        t += step;
    }
    let sidelobe = if peak > 0.0 { 20.0 * (peak / mean).log10() } else { f64::NEG_INFINITY };
    (mean, ripple, sidelobe)
}
