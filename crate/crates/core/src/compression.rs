//! Unbiased p-norm b-bit dithered quantization.
//!
//! Each block `x` of a vector is sent as one scale `r ≥ ‖x‖_p`, a sign bit per
//! element and an integer level per element in `{0, …, 2^{b−1}}`. The
//! receiver reconstructs `r · sign · 2^{−(b−1)} · level`. The level is
//! `⌊2^{b−1}|x_i|/r⌋` rounded up with probability equal to the fractional
//! part, which makes the reconstruction unbiased.
//!
//! The scale goes over the wire as an `f32`. It is rounded *up* from
//! `‖x‖_p`, so `|x_i| ≤ r` still holds and the levels stay within `b` bits.
//!
//! Wire layout (little-endian):
//!
//! ```text
//! u32 element_count
//! per block:
//!     f32 scale
//!     sign bits, then b-bit levels, packed LSB-first, padded to a byte
//! ```
//!
//! `b` and the block size are not on the wire; both ends share the
//! [`QuantizerConfig`].

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, Streams};
use crate::{Error, Result};

/// Bits charged for the per-block scale.
pub const NORM_BITS: u64 = 32;
/// Bits charged per element when a vector is sent uncompressed.
pub const RAW_BITS_PER_ELEMENT: u64 = 64;
/// Largest supported bit width.
pub const MAX_BITS: u32 = 32;

/// Norm used to scale each block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormRepr", into = "NormRepr")]
pub enum NormKind {
    /// Finite `p ≥ 1`.
    P(f64),
    Infinity,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NormRepr {
    Num(f64),
    Name(String),
}

impl TryFrom<NormRepr> for NormKind {
    type Error = String;

    fn try_from(r: NormRepr) -> std::result::Result<Self, String> {
        match r {
            NormRepr::Num(p) if p >= 1.0 && p.is_finite() => Ok(NormKind::P(p)),
            NormRepr::Num(p) => Err(format!("norm p must be >= 1, got {p}")),
            NormRepr::Name(s) => s.parse(),
        }
    }
}

impl From<NormKind> for NormRepr {
    fn from(n: NormKind) -> Self {
        match n {
            NormKind::P(p) => NormRepr::Num(p),
            NormKind::Infinity => NormRepr::Name("inf".into()),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "max" => Ok(NormKind::Infinity),
            other => match other.parse::<f64>() {
                Ok(p) if p >= 1.0 && p.is_finite() => Ok(NormKind::P(p)),
                _ => Err(format!("norm must be a number >= 1 or \"inf\", got {s:?}")),
            },
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormKind::P(p) => write!(f, "{p}"),
            NormKind::Infinity => write!(f, "inf"),
        }
    }
}

impl NormKind {
    pub fn of(&self, x: &[f64]) -> f64 {
        match *self {
            NormKind::Infinity => x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            NormKind::P(p) if p == 1.0 => x.iter().map(|v| v.abs()).sum(),
            NormKind::P(p) if p == 2.0 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::P(p) => x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bits: u32,
    pub norm: NormKind,
    pub block_size: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self { bits: 2, norm: NormKind::Infinity, block_size: 512 }
    }
}

impl QuantizerConfig {
    pub fn new(bits: u32, norm: NormKind, block_size: usize) -> Result<Self> {
        let cfg = Self { bits, norm, block_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(Error::Parameter(format!(
                "bits must be in 1..={MAX_BITS}, got {}",
                self.bits
            )));
        }
        if self.block_size == 0 {
            return Err(Error::Parameter("block_size must be at least 1".into()));
        }
        if let NormKind::P(p) = self.norm {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::Parameter(format!("norm p must be >= 1, got {p}")));
            }
        }
        Ok(())
    }

    /// `2^{b−1}`, the largest level.
    pub fn max_level(&self) -> u32 {
        1u32 << (self.bits - 1)
    }

    fn step(&self) -> f64 {
        (-(f64::from(self.bits) - 1.0)).exp2()
    }

    fn block_lengths(&self, len: usize) -> impl Iterator<Item = usize> + '_ {
        (0..len.div_ceil(self.block_size))
            .map(move |k| self.block_size.min(len - k * self.block_size))
    }

    /// Payload bits for a vector of `len` elements: `32 + d_block·(1 + b)`
    /// per block.
    pub fn payload_bits(&self, len: usize) -> u64 {
        self.block_lengths(len)
            .map(|d| NORM_BITS + d as u64 * (1 + u64::from(self.bits)))
            .sum()
    }

    /// Worst-case `E‖x − Q(x)‖² / ‖x‖²` over vectors of length `len`:
    /// `d^{max(1, 2/p)} · 4^{−(b−1)} / 4` for the largest block `d`.
    pub fn analytic_c(&self, len: usize) -> f64 {
        let d = self.block_size.min(len) as f64;
        if d == 0.0 {
            return 0.0;
        }
        let exponent = match self.norm {
            NormKind::Infinity => 1.0,
            NormKind::P(p) => (2.0 / p).max(1.0),
        };
        d.powf(exponent) * self.step() * self.step() / 4.0
    }
}

/// Source of uniform dither values in `[0, 1)`, addressed by block.
pub trait Dither {
    fn uniform(&mut self, block: usize) -> f64;
}

/// Draws every block's dither from one sequential generator.
pub struct SeqDither<'a, R: Rng>(pub &'a mut R);

impl<R: Rng> Dither for SeqDither<'_, R> {
    fn uniform(&mut self, _block: usize) -> f64 {
        self.0.random::<f64>()
    }
}

/// One counter-based stream per `(seed, round, agent, block)`.
pub struct KeyedDither {
    streams: Streams,
    round: u64,
    agent: u64,
    current: Option<(usize, ChaCha12Rng)>,
}

impl KeyedDither {
    pub fn new(streams: Streams, round: u64, agent: u64) -> Self {
        Self { streams, round, agent, current: None }
    }
}

impl Dither for KeyedDither {
    fn uniform(&mut self, block: usize) -> f64 {
        if self.current.as_ref().map(|(b, _)| *b) != Some(block) {
            let rng = self.streams.stream(Purpose::Dither, self.round, self.agent, block as u64);
            self.current = Some((block, rng));
        }
        let (_, rng) = self.current.as_mut().expect("stream set above");
        rng.random::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    /// Transmitted scale, `≥ ‖block‖_p`. Zero for an all-zero block.
    pub norm: f32,
    /// `true` for a negative element. `sign(0)` is encoded as `+`.
    pub negative: Vec<bool>,
    pub levels: Vec<u32>,
}

/// `Q_p(x)` in transmitted form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMessage {
    pub config: QuantizerConfig,
    pub len: usize,
    pub blocks: Vec<QuantizedBlock>,
}

fn scale_at_least(v: f64) -> Result<f32> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::Numeric(format!("block norm {v} does not fit in f32")));
    }
    Ok(if f64::from(f) < v { f.next_up() } else { f })
}

/// Quantizes `x` block by block.
pub fn quantize(x: &[f64], cfg: &QuantizerConfig, dither: &mut impl Dither) -> Result<QuantizedMessage> {
    cfg.validate()?;
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let top = f64::from(cfg.max_level());
    let mut blocks = Vec::with_capacity(x.len().div_ceil(cfg.block_size));
    for (k, chunk) in x.chunks(cfg.block_size).enumerate() {
        let negative: Vec<bool> = chunk.iter().map(|v| *v < 0.0).collect();
        // ‖x‖_p ≥ ‖x‖_∞; the max guards against powf round-off.
        let exact = cfg.norm.of(chunk).max(NormKind::Infinity.of(chunk));
        if exact == 0.0 {
            blocks.push(QuantizedBlock { norm: 0.0, negative, levels: vec![0; chunk.len()] });
            continue;
        }
        let norm = scale_at_least(exact)?;
        let r = f64::from(norm);
        let levels = chunk
            .iter()
            .map(|v| {
                let s = (v.abs() / r) * top;
                let floor = s.floor();
                let frac = s - floor;
                // Same law as ⌊s + u⌋ without rounding s + u near u → 1.
                let up = dither.uniform(k) < frac;
                floor as u32 + u32::from(up)
            })
            .collect();
        blocks.push(QuantizedBlock { norm, negative, levels });
    }
    Ok(QuantizedMessage { config: *cfg, len: x.len(), blocks })
}

/// Reconstructs `(norm · sign · 2^{−(b−1)}) · level` per element.
pub fn decode(msg: &QuantizedMessage) -> Result<Vec<f64>> {
    let max = msg.config.max_level();
    let step = msg.config.step();
    let mut out = Vec::with_capacity(msg.len);
    for (k, block) in msg.blocks.iter().enumerate() {
        if block.levels.len() != block.negative.len() {
            return Err(Error::CorruptMessage(format!("block {k}: sign/level count mismatch")));
        }
        if !(block.norm.is_finite() && block.norm >= 0.0) {
            return Err(Error::CorruptMessage(format!("block {k}: invalid norm {}", block.norm)));
        }
        let unit = f64::from(block.norm) * step;
        for (&neg, &level) in block.negative.iter().zip(&block.levels) {
            if level > max {
                return Err(Error::CorruptMessage(format!(
                    "block {k}: level {level} exceeds 2^(b-1) = {max}"
                )));
            }
            let signed = if neg { -unit } else { unit };
            out.push(signed * f64::from(level));
        }
    }
    if out.len() != msg.len {
        return Err(Error::CorruptMessage(format!(
            "decoded {} elements, header says {}",
            out.len(),
            msg.len
        )));
    }
    Ok(out)
}

/// Exact payload bits of a message.
pub fn message_bits(msg: &QuantizedMessage) -> u64 {
    let b = u64::from(msg.config.bits);
    msg.blocks
        .iter()
        .map(|blk| NORM_BITS + blk.levels.len() as u64 * (1 + b))
        .sum()
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new(bytes: Vec<u8>) -> Self {
        Self { bytes, acc: 0, filled: 0 }
    }

    fn put(&mut self, value: u64, width: u32) {
        let mut value = value;
        let mut width = width;
        while width > 0 {
            let take = width.min(8 - self.filled);
            let mask = (1u64 << take) - 1;
            self.acc |= (value & mask) << self.filled;
            self.filled += take;
            value >>= take;
            width -= take;
            if self.filled == 8 {
                self.bytes.push(self.acc as u8);
                self.acc = 0;
                self.filled = 0;
            }
        }
    }

    fn pad(&mut self) {
        if self.filled > 0 {
            self.bytes.push(self.acc as u8);
            self.acc = 0;
            self.filled = 0;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    bit: u32,
}

impl<'a> BitReader<'a> {
    fn take(&mut self, width: u32) -> Result<u64> {
        let mut out = 0u64;
        let mut got = 0;
        while got < width {
            let byte = *self
                .bytes
                .get(self.pos)
                .ok_or_else(|| Error::CorruptMessage("truncated bit field".into()))?;
            let take = (width - got).min(8 - self.bit);
            let chunk = (u64::from(byte) >> self.bit) & ((1u64 << take) - 1);
            out |= chunk << got;
            got += take;
            self.bit += take;
            if self.bit == 8 {
                self.bit = 0;
                self.pos += 1;
            }
        }
        Ok(out)
    }

    fn align(&mut self) {
        if self.bit > 0 {
            self.bit = 0;
            self.pos += 1;
        }
    }
}

impl QuantizedMessage {
    pub fn bits(&self) -> u64 {
        message_bits(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(4 + self.bits().div_ceil(8) as usize + self.blocks.len());
        bytes.extend_from_slice(&(self.len as u32).to_le_bytes());
        let mut w = BitWriter::new(bytes);
        for block in &self.blocks {
            w.bytes.extend_from_slice(&block.norm.to_le_bytes());
            for &neg in &block.negative {
                w.put(u64::from(neg), 1);
            }
            for &level in &block.levels {
                w.put(u64::from(level), self.config.bits);
            }
            w.pad();
        }
        w.bytes
    }

    pub fn from_bytes(bytes: &[u8], config: &QuantizerConfig) -> Result<Self> {
        config.validate()?;
        let header: [u8; 4] = bytes
            .get(..4)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| Error::CorruptMessage("missing element count".into()))?;
        let len = u32::from_le_bytes(header) as usize;
        let mut r = BitReader { bytes, pos: 4, bit: 0 };
        let mut blocks = Vec::new();
        for d in config.block_lengths(len) {
            let norm_bytes: [u8; 4] = bytes
                .get(r.pos..r.pos + 4)
                .and_then(|h| h.try_into().ok())
                .ok_or_else(|| Error::CorruptMessage("truncated block norm".into()))?;
            let norm = f32::from_le_bytes(norm_bytes);
            r.pos += 4;
            let negative = (0..d).map(|_| r.take(1).map(|b| b == 1)).collect::<Result<_>>()?;
            let levels = (0..d)
                .map(|_| r.take(config.bits).map(|v| v as u32))
                .collect::<Result<Vec<u32>>>()?;
            r.align();
            if let Some(l) = levels.iter().find(|l| **l > config.max_level()) {
                return Err(Error::CorruptMessage(format!(
                    "level {l} exceeds 2^(b-1) = {}",
                    config.max_level()
                )));
            }
            if !(norm.is_finite() && norm >= 0.0) {
                return Err(Error::CorruptMessage(format!("invalid block norm {norm}")));
            }
            blocks.push(QuantizedBlock { norm, negative, levels });
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptMessage(format!(
                "{} trailing bytes after last block",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config: *config, len, blocks })
    }
}

/// Per-call compression diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompressionStats {
    /// `‖x − Q(x)‖₂`.
    pub error_norm: f64,
    pub bits_used: u64,
    /// Running mean of `‖x − Q(x)‖² / ‖x‖²` over calls with `x ≠ 0`.
    pub c_estimate: f64,
}

/// Accumulates [`CompressionStats`] across calls.
#[derive(Debug, Clone, Default)]
pub struct CompressionMonitor {
    ratio_sum: f64,
    ratio_count: u64,
    pub bits_total: u64,
}

impl CompressionMonitor {
    pub fn record(&mut self, x: &[f64], qx: &[f64], bits: u64) -> CompressionStats {
        let err2: f64 = x.iter().zip(qx).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if norm2 > 0.0 {
            self.ratio_sum += err2 / norm2;
            self.ratio_count += 1;
        }
        self.bits_total += bits;
        CompressionStats {
            error_norm: err2.sqrt(),
            bits_used: bits,
            c_estimate: if self.ratio_count == 0 { 0.0 } else { self.ratio_sum / self.ratio_count as f64 },
        }
    }
}

/// The compression operator applied to each agent's message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Compressor {
    /// Exact transmission (`C = 0`), charged at 64 bits per element.
    Identity,
    Quantized(QuantizerConfig),
}

impl Compressor {
    /// Returns `Q(x)` and the payload bits.
    pub fn compress(&self, x: &[f64], dither: &mut impl Dither) -> Result<(Vec<f64>, u64)> {
        match self {
            Compressor::Identity => {
                if let Some(index) = x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput { index });
                }
                Ok((x.to_vec(), RAW_BITS_PER_ELEMENT * x.len() as u64))
            }
            Compressor::Quantized(cfg) => {
                let msg = quantize(x, cfg, dither)?;
                let bits = msg.bits();
                Ok((decode(&msg)?, bits))
            }
        }
    }

    /// Analytic compression constant for vectors of length `len`.
    pub fn c_constant(&self, len: usize) -> f64 {
        match self {
            Compressor::Identity => 0.0,
            Compressor::Quantized(cfg) => cfg.analytic_c(len),
        }
    }

    pub fn payload_bits(&self, len: usize) -> u64 {
        match self {
            Compressor::Identity => RAW_BITS_PER_ELEMENT * len as u64,
            Compressor::Quantized(cfg) => cfg.payload_bits(len),
        }
    }
}

/// Result of [`estimate_c`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CEstimate {
    /// Max over sampled `x` of the dither-averaged `‖x − Q(x)‖² / ‖x‖²`.
    pub empirical: f64,
    pub analytic_bound: f64,
    /// Samples skipped for having zero norm.
    pub skipped: usize,
}

/// Monte-Carlo estimate of the compression constant.
///
/// `sampler` draws test vectors; each is quantized `draws` times.
pub fn estimate_c<R: Rng>(
    cfg: &QuantizerConfig,
    mut sampler: impl FnMut(&mut R) -> Vec<f64>,
    trials: usize,
    draws: usize,
    rng: &mut R,
) -> Result<CEstimate> {
    if trials == 0 || draws == 0 {
        return Err(Error::Parameter("trials and draws must be at least 1".into()));
    }
    let mut empirical = 0.0_f64;
    let mut skipped = 0;
    let mut len = 0;
    for _ in 0..trials {
        let x = sampler(rng);
        len = len.max(x.len());
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            skipped += 1;
            continue;
        }
        let mut acc = 0.0;
        for _ in 0..draws {
            let q = decode(&quantize(&x, cfg, &mut SeqDither(rng))?)?;
            acc += x.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        empirical = empirical.max(acc / draws as f64 / norm2);
    }
    Ok(CEstimate { empirical, analytic_bound: cfg.analytic_c(len), skipped })
}
