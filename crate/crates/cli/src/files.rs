//! Scenario documents and binary dumps of received blocks.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::Context;
use isacnet_core::channel::{RxBlock, Stage1Rx, Stage2Rx, TimeFreqGrid};
use isacnet_core::{Scenario, ScenarioDoc};
use num_complex::Complex64;

/// Parses a JSON scenario document. Type errors carry the offending field
/// path; range errors come from validation.
pub fn parse_scenario(text: &str) -> anyhow::Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("{path}: {}", e.into_inner())
    })?;
    Ok(Scenario::from_doc(&doc)?)
}

pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("invalid scenario {}", path.display()))
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&scenario.to_doc())?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an RxBlock dump (bad magic)")]
    Magic,
    #[error("unknown stage tag {0}")]
    Stage(u32),
    #[error("block too large")]
    Size,
}

const MAGIC: &[u8; 4] = b"ISRX";

/// Writes a received block.
///
/// Layout, all little-endian: magic `ISRX`, then `u32` stage (1 or 2),
/// `u32` receive antennas, `u32` subcarriers `K_s`, `u32` symbols `M_s`.
/// The `K_s M_s` transmitted symbols follow in `m * K_s + k` order, then the
/// samples: Stage 1 at `(m * K_s + k) * N_R + n`, Stage 2 at
/// `n * K_s M_s + m * K_s + k`. Every complex value is an `f64` real part
/// followed by an `f64` imaginary part.
pub fn write_rx_block<W: Write>(block: &RxBlock, mut w: W) -> Result<(), DumpError> {
    let (stage, n_r, symbols, samples) = match block {
        RxBlock::Stage1(b) => (1u32, b.rx_antennas, &b.symbols, &b.samples),
        RxBlock::Stage2(b) => (2u32, b.rx_antennas, &b.symbols, &b.stacked),
    };
    w.write_all(MAGIC)?;
    for v in [stage, n_r as u32, symbols.subcarriers as u32, symbols.symbols as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in symbols.data.iter().chain(samples.iter()) {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_complex<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 16];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        let re = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

pub fn read_rx_block<R: Read>(mut r: R) -> Result<RxBlock, DumpError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DumpError::Magic);
    }
    let stage = read_u32(&mut r)?;
    let n_r = read_u32(&mut r)? as usize;
    let k_s = read_u32(&mut r)? as usize;
    let m_s = read_u32(&mut r)? as usize;
    let len = k_s.checked_mul(m_s).ok_or(DumpError::Size)?;
    let total = len.checked_mul(n_r).ok_or(DumpError::Size)?;
    let symbols = TimeFreqGrid { subcarriers: k_s, symbols: m_s, data: read_complex(&mut r, len)? };
    let samples = read_complex(&mut r, total)?;
    match stage {
        1 => Ok(RxBlock::Stage1(Stage1Rx { rx_antennas: n_r, symbols, samples })),
        2 => Ok(RxBlock::Stage2(Stage2Rx { rx_antennas: n_r, symbols, stacked: samples })),
        s => Err(DumpError::Stage(s)),
    }
}
