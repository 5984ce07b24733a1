//! Point-target echoes, the two-way channel and received symbols.
//!
//! Symbol grids are stored with the subcarrier index running fastest:
//! entry `(k, m)` lives at `m * K_s + k`, which is also the order of the
//! diagonal of `T(τ, f_D)`. Stage-2 stacked vectors put the antenna index
//! outermost (`b ⊗ T`), so antenna `n` occupies `n*K_s*M_s .. (n+1)*K_s*M_s`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::array::{inner, steering_vector, BeamVector};
use crate::config::{BsDescriptor, FrameConfig};
use crate::error::Result;
use crate::geometry::{global_to_local, global_to_local_xy, GlobalPoint};
use crate::SPEED_OF_LIGHT;

/// A point target. `mean_rcs_m2` is the Swerling-I mean; the realized RCS is
/// drawn separately per trial and per base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub position: GlobalPoint,
    pub velocity_mps: [f64; 2],
    pub mean_rcs_m2: f64,
}

/// Exponentially distributed RCS with the given mean.
pub fn draw_rcs<R: Rng + ?Sized>(mean_rcs: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean_rcs)
        .expect("mean RCS must be positive")
        .sample(rng)
}

/// Echo parameters of one target as seen by one base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoParams {
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub angle_rad: f64,
    /// Amplitude `α` from the radar equation.
    pub amplitude: f64,
    /// Carrier phase `φ = -2π f_c τ`, wrapped to [0, 2π).
    pub phase_rad: f64,
    pub range_m: f64,
}

impl EchoParams {
    /// `α e^{iφ}`.
    pub fn complex_amplitude(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase_rad)
    }

    /// Overall Stage-2 gain `h = √P γ α e^{iφ}`.
    pub fn composite_gain(&self, p_avg: f64, gamma: Complex64) -> Complex64 {
        p_avg.sqrt() * gamma * self.complex_amplitude()
    }
}

pub fn echo_params(target: &TargetState, bs: &BsDescriptor, frame: &FrameConfig, rcs: f64) -> Result<EchoParams> {
    let lp = global_to_local(&target.position, bs)?;
    let r = lp.range_m;
    let (x, y) = global_to_local_xy(&target.position, bs);
    // radial velocity along the line of sight, in the local frame
    let (s, c) = bs.orientation_rad.sin_cos();
    let (vx, vy) = (target.velocity_mps[0], target.velocity_mps[1]);
    let v_local = (vx * c + vy * s, -vx * s + vy * c);
    let v_radial = (v_local.0 * x + v_local.1 * y) / r;
    let delay = lp.delay_s();
    let fc = frame.carrier_hz;
    let amplitude = (bs.tx_gain * bs.rx_gain * SPEED_OF_LIGHT.powi(2) * rcs
        / ((4.0 * PI).powi(3) * fc * fc * r.powi(4)))
    .sqrt();
    Ok(EchoParams {
        delay_s: delay,
        doppler_hz: 2.0 * fc * v_radial / SPEED_OF_LIGHT,
        angle_rad: lp.angle_rad,
        amplitude,
        phase_rad: (-2.0 * PI * fc * delay).rem_euclid(2.0 * PI),
        range_m: r,
    })
}

/// Delay/Doppler phase factor `e^{i2π m T_s f_D} e^{-i2π k Δf τ}`.
pub fn delay_doppler_phase(k: usize, m: usize, delay_s: f64, doppler_hz: f64, frame: &FrameConfig) -> Complex64 {
    let ph = 2.0 * PI
        * (m as f64 * frame.symbol_duration_s() * doppler_hz - k as f64 * frame.subcarrier_spacing_hz * delay_s);
    Complex64::from_polar(1.0, ph)
}

/// Diagonal of `T(τ, f_D)` in `m * K_s + k` order.
pub fn delay_doppler_ramp(delay_s: f64, doppler_hz: f64, frame: &FrameConfig) -> Vec<Complex64> {
    let k_s = frame.sensing_subcarriers;
    let m_s = frame.sensing_symbols;
    let dk = Complex64::from_polar(1.0, -2.0 * PI * frame.subcarrier_spacing_hz * delay_s);
    let mut out = Vec::with_capacity(k_s * m_s);
    for m in 0..m_s {
        let start = Complex64::from_polar(1.0, 2.0 * PI * m as f64 * frame.symbol_duration_s() * doppler_hz);
        // re-anchor every 64 subcarriers to keep the recursion error near 1e-15
        let mut ph = start;
        for k in 0..k_s {
            if k % 64 == 0 {
                ph = delay_doppler_phase(k, m, delay_s, doppler_hz, frame);
            }
            out.push(ph);
            ph *= dk;
        }
    }
    out
}

/// Two-way channel `H[k, m]` as an `N_R × N_T` matrix.
pub fn channel_matrix(
    echoes: &[EchoParams],
    k: usize,
    m: usize,
    frame: &FrameConfig,
    n_t: usize,
    n_r: usize,
) -> DMatrix<Complex64> {
    let mut h = DMatrix::<Complex64>::zeros(n_r, n_t);
    for e in echoes {
        let g = e.complex_amplitude() * delay_doppler_phase(k, m, e.delay_s, e.doppler_hz, frame);
        let a = steering_vector(e.angle_rad, n_t);
        let b = steering_vector(e.angle_rad, n_r);
        for r in 0..n_r {
            for c in 0..n_t {
                h[(r, c)] += g * b[r] * a[c].conj();
            }
        }
    }
    h
}

/// Complex time-frequency grid, `(k, m)` stored at `m * subcarriers + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFreqGrid {
    pub subcarriers: usize,
    pub symbols: usize,
    pub data: Vec<Complex64>,
}

impl TimeFreqGrid {
    pub fn zeros(subcarriers: usize, symbols: usize) -> Self {
        Self {
            subcarriers,
            symbols,
            data: vec![Complex64::new(0.0, 0.0); subcarriers * symbols],
        }
    }

    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        self.data[m * self.subcarriers + k]
    }

    pub fn set(&mut self, k: usize, m: usize, v: Complex64) {
        self.data[m * self.subcarriers + k] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Unit-modulus QPSK symbols, i.i.d. uniform over the four phases.
pub fn qpsk_symbols<R: Rng + ?Sized>(subcarriers: usize, symbols: usize, rng: &mut R) -> TimeFreqGrid {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let data = (0..subcarriers * symbols)
        .map(|_| {
            let bits: u8 = rng.random_range(0..4);
            Complex64::new(
                if bits & 1 == 0 { s } else { -s },
                if bits & 2 == 0 { s } else { -s },
            )
        })
        .collect();
    TimeFreqGrid {
        subcarriers,
        symbols,
        data,
    }
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Stage-1 received block for one scan direction: `y[k, m]` (length `N_R`)
/// for every resource element, stored at `(m * K_s + k) * N_R + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Rx {
    pub rx_antennas: usize,
    pub symbols: TimeFreqGrid,
    pub samples: Vec<Complex64>,
}

impl Stage1Rx {
    pub fn vector(&self, k: usize, m: usize) -> &[Complex64] {
        let start = (m * self.symbols.subcarriers + k) * self.rx_antennas;
        &self.samples[start..start + self.rx_antennas]
    }
}

/// Stage-2 stacked received vector `ỹ` of one base station (`b ⊗ T` order).
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Rx {
    pub rx_antennas: usize,
    pub symbols: TimeFreqGrid,
    pub stacked: Vec<Complex64>,
}

impl Stage2Rx {
    /// The `K_s M_s` samples of antenna `n`.
    pub fn antenna(&self, n: usize) -> &[Complex64] {
        let len = self.symbols.len();
        &self.stacked[n * len..(n + 1) * len]
    }
}

/// Received data of either stage.
#[derive(Debug, Clone, PartialEq)]
pub enum RxBlock {
    Stage1(Stage1Rx),
    Stage2(Stage2Rx),
}

/// Full-array Stage-1 simulation: `y[k,m] = H[k,m] w_T x_{k,m} + n[k,m]`.
pub fn simulate_stage1_rx<R: Rng + ?Sized>(
    frame: &FrameConfig,
    bs: &BsDescriptor,
    echoes: &[EchoParams],
    tx_beam: &BeamVector,
    noise_variance: f64,
    rng: &mut R,
) -> Stage1Rx {
    let k_s = frame.sensing_subcarriers;
    let m_s = frame.sensing_symbols;
    let n_r = bs.rx_antennas;
    let symbols = qpsk_symbols(k_s, m_s, rng);
    // H[k,m] w_T = Σ_l α e^{iφ} ramp_l[k,m] (a(θ_l)ᴴ w_T) b(θ_l)
    let per_target: Vec<(Vec<Complex64>, Vec<Complex64>)> = echoes
        .iter()
        .map(|e| {
            let tx_gain = inner(&steering_vector(e.angle_rad, tx_beam.len()), &tx_beam.coefficients);
            let g = e.complex_amplitude() * tx_gain;
            let b: Vec<Complex64> = steering_vector(e.angle_rad, n_r).into_iter().map(|v| v * g).collect();
            (delay_doppler_ramp(e.delay_s, e.doppler_hz, frame), b)
        })
        .collect();
    let mut samples = Vec::with_capacity(k_s * m_s * n_r);
    for j in 0..k_s * m_s {
        let x = symbols.data[j];
        for n in 0..n_r {
            let mut v = Complex64::new(0.0, 0.0);
            for (ramp, b) in &per_target {
                v += ramp[j] * b[n];
            }
            v *= x;
            if noise_variance > 0.0 {
                v += complex_gaussian(noise_variance, rng);
            }
            samples.push(v);
        }
    }
    Stage1Rx {
        rx_antennas: n_r,
        symbols,
        samples,
    }
}

/// Receive-beamformed Stage-1 samples `w_Rᴴ y[k, m]` drawn directly.
///
/// Statistically identical to applying `w_R` to [`simulate_stage1_rx`]:
/// the beamformed noise `w_Rᴴ n` is `CN(0, σ² ‖w_R‖²)`.
pub struct Stage1Synthesizer<'a> {
    frame: &'a FrameConfig,
    echoes: &'a [EchoParams],
    ramps: Vec<Vec<Complex64>>,
}

impl<'a> Stage1Synthesizer<'a> {
    pub fn new(frame: &'a FrameConfig, echoes: &'a [EchoParams]) -> Self {
        let ramps = echoes
            .iter()
            .map(|e| delay_doppler_ramp(e.delay_s, e.doppler_hz, frame))
            .collect();
        Self { frame, echoes, ramps }
    }

    /// Returns the transmitted symbols and `w_Rᴴ y[k, m]` in grid order.
    pub fn beamformed<R: Rng + ?Sized>(
        &self,
        tx_beam: &BeamVector,
        rx_beam: &BeamVector,
        noise_variance: f64,
        rng: &mut R,
    ) -> (TimeFreqGrid, TimeFreqGrid) {
        let k_s = self.frame.sensing_subcarriers;
        let m_s = self.frame.sensing_symbols;
        let symbols = qpsk_symbols(k_s, m_s, rng);
        let gains: Vec<Complex64> = self
            .echoes
            .iter()
            .map(|e| {
                let tx = inner(&steering_vector(e.angle_rad, tx_beam.len()), &tx_beam.coefficients);
                let rx = inner(&rx_beam.coefficients, &steering_vector(e.angle_rad, rx_beam.len()));
                e.complex_amplitude() * tx * rx
            })
            .collect();
        let noise_scale = noise_variance * rx_beam.norm_sqr();
        let mut out = TimeFreqGrid::zeros(k_s, m_s);
        for (j, slot) in out.data.iter_mut().enumerate() {
            let mut v = Complex64::new(0.0, 0.0);
            for (g, ramp) in gains.iter().zip(&self.ramps) {
                v += g * ramp[j];
            }
            v *= symbols.data[j];
            if noise_scale > 0.0 {
                v += complex_gaussian(noise_scale, rng);
            }
            *slot = v;
        }
        (symbols, out)
    }
}

/// Noiseless Stage-2 stack built from the effective channel
/// `Σ_l h_l (b(θ_l) ⊗ T(τ_l, f_D,l)) x̃`.
pub fn stage2_signal_kron(
    frame: &FrameConfig,
    rx_antennas: usize,
    echoes: &[(EchoParams, Complex64)],
    symbols: &TimeFreqGrid,
) -> Vec<Complex64> {
    let len = symbols.len();
    let mut out = vec![Complex64::new(0.0, 0.0); len * rx_antennas];
    for (e, h) in echoes {
        let ramp = delay_doppler_ramp(e.delay_s, e.doppler_hz, frame);
        let tx: Vec<Complex64> = ramp.iter().zip(&symbols.data).map(|(t, x)| h * t * x).collect();
        let b = steering_vector(e.angle_rad, rx_antennas);
        for (n, bn) in b.iter().enumerate() {
            for (o, t) in out[n * len..(n + 1) * len].iter_mut().zip(&tx) {
                *o += bn * t;
            }
        }
    }
    out
}

/// Noiseless Stage-2 stack assembled element by element from
/// `y[k, m] = H[k, m] w_T x_{k,m}` with the full channel matrix.
pub fn stage2_signal_direct(
    frame: &FrameConfig,
    bs: &BsDescriptor,
    echoes: &[EchoParams],
    tx_beam: &BeamVector,
    symbols: &TimeFreqGrid,
) -> Vec<Complex64> {
    let len = symbols.len();
    let n_r = bs.rx_antennas;
    let w = nalgebra::DVector::from_column_slice(&tx_beam.coefficients);
    let mut out = vec![Complex64::new(0.0, 0.0); len * n_r];
    for m in 0..symbols.symbols {
        for k in 0..symbols.subcarriers {
            let h = channel_matrix(echoes, k, m, frame, tx_beam.len(), n_r);
            let y = h * &w * symbols.get(k, m);
            let j = m * symbols.subcarriers + k;
            for n in 0..n_r {
                out[n * len + j] = y[n];
            }
        }
    }
    out
}

/// Stage-2 simulation: the Kronecker-structured stack plus `CN(0, σ² I)` noise.
/// `echoes` carry each target's composite gain `h_l`.
pub fn simulate_stage2_rx<R: Rng + ?Sized>(
    frame: &FrameConfig,
    rx_antennas: usize,
    echoes: &[(EchoParams, Complex64)],
    noise_variance: f64,
    rng: &mut R,
) -> Stage2Rx {
    let symbols = qpsk_symbols(frame.sensing_subcarriers, frame.sensing_symbols, rng);
    let mut stacked = stage2_signal_kron(frame, rx_antennas, echoes, &symbols);
    if noise_variance > 0.0 {
        for v in &mut stacked {
            *v += complex_gaussian(noise_variance, rng);
        }
    }
    Stage2Rx {
        rx_antennas,
        symbols,
        stacked,
    }
}
