//! Monte-Carlo self-test of the quantizer on one Gaussian vector.

use rand::Rng;
use serde::Serialize;

use crate::compression::{decode, quantize, NormKind, QuantizerConfig, SeqDither};
use crate::rng::{Purpose, Streams};
use crate::{Error, Result};

/// Fewest trials accepted.
pub const MIN_TRIALS: usize = 1000;

/// Gaussian tail level used for every one-sided test (`Φ(−5)`).
const LEVEL: f64 = 2.866_515_718_791_939e-7;

/// Result for one norm.
#[derive(Debug, Clone, Serialize)]
pub struct NormCheck {
    pub norm: String,
    /// Mean of `‖x − Q(x)‖²`.
    pub mean_sq_error: f64,
    /// Standard error of `mean_sq_error`.
    pub mean_sq_error_se: f64,
    /// `sqrt(mean_sq_error) / ‖x‖`.
    pub relative_error: f64,
    /// `‖mean(Q(x)) − x‖ / ‖x‖`.
    pub mean_relative_error: f64,
    /// `mean_sq_error / ‖x‖²`.
    pub empirical_c: f64,
    /// `nnz(x)·4^{−(b−1)}/4·‖x‖_p²`.
    pub variance_bound: f64,
    pub variance_ok: bool,
    /// Largest per-coordinate round-up count deviation divided by its
    /// Bernstein threshold; at most 1 passes.
    pub bias_ratio: f64,
    pub unbiased: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantCheckReport {
    pub bits: u32,
    pub norm: String,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worst-case `C` for this configuration.
    pub analytic_c: f64,
    /// The requested norm first, then the remaining of `∞, 2, 1`.
    pub checks: Vec<NormCheck>,
    /// Mean errors satisfy `∞ ≤ 2 ≤ 1` up to three combined standard errors.
    pub ordered: bool,
    pub pass: bool,
}

/// Two-sided Bernstein radius for a sum of bounded centred indicators with
/// total variance `var`.
fn bernstein_radius(var: f64) -> f64 {
    let c = (2.0 / LEVEL).ln();
    c / 3.0 + (c * c / 9.0 + 2.0 * c * var).sqrt()
}

fn check_one(x: &[f64], cfg: &QuantizerConfig, trials: usize, rng: &mut impl Rng) -> Result<NormCheck> {
    let d = x.len();
    let scale = f64::from(quantize(x, cfg, &mut SeqDither(&mut *rng))?.blocks[0].norm);
    let step = scale / f64::from(cfg.max_level());
    let mut sum = vec![0.0; d];
    let mut errs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let q = decode(&quantize(x, cfg, &mut SeqDither(&mut *rng))?)?;
        let mut e = 0.0;
        for j in 0..d {
            sum[j] += q[j] - x[j];
            e += (q[j] - x[j]).powi(2);
        }
        errs.push(e);
    }
    let n = trials as f64;
    // the summed error of coordinate j is step·(ups − n·f), ups ~ Binomial(n, f)
    let mut bias_ratio: f64 = 0.0;
    for j in 0..d {
        if step == 0.0 {
            break;
        }
        let s = x[j].abs() / step;
        let f = s - s.floor();
        let dev = sum[j].abs() / step;
        bias_ratio = bias_ratio.max(dev / bernstein_radius(n * f * (1.0 - f)));
    }
    let mean = errs.iter().sum::<f64>() / n;
    let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    let nnz = x.iter().filter(|v| **v != 0.0).count() as f64;
    let lvl = f64::from(cfg.max_level());
    let bound = nnz * cfg.norm.of(x).powi(2) / (4.0 * lvl * lvl);
    Ok(NormCheck {
        norm: cfg.norm.to_string(),
        mean_sq_error: mean,
        mean_sq_error_se: se,
        relative_error: if norm2 > 0.0 { (mean / norm2).sqrt() } else { 0.0 },
        mean_relative_error: if norm2 > 0.0 {
            (sum.iter().map(|v| (v / n).powi(2)).sum::<f64>() / norm2).sqrt()
        } else {
            0.0
        },
        empirical_c: if norm2 > 0.0 { mean / norm2 } else { 0.0 },
        variance_bound: bound,
        variance_ok: mean <= bound + 3.0 * se,
        bias_ratio,
        unbiased: bias_ratio <= 1.0,
    })
}

/// Quantizes one standard normal vector of length `d` `trials` times with
/// `bits` bits under each norm, as a single block.
pub fn quantcheck(bits: u32, norm: NormKind, d: usize, trials: usize, seed: u64) -> Result<QuantCheckReport> {
    if trials < MIN_TRIALS {
        return Err(Error::Parameter(format!("trials must be at least {MIN_TRIALS}, got {trials}")));
    }
    if d == 0 {
        return Err(Error::Parameter("d must be positive".into()));
    }
    let cfg = QuantizerConfig::new(bits, norm, d)?;
    let streams = Streams::new(seed);
    let mut xr = streams.stream(Purpose::Data, 0, 0, 0);
    let x: Vec<f64> = (0..d).map(|_| xr.sample::<f64, _>(rand_distr::StandardNormal)).collect();

    let mut norms = vec![norm];
    for k in [NormKind::Infinity, NormKind::P(2.0), NormKind::P(1.0)] {
        if k != norm {
            norms.push(k);
        }
    }
    let mut checks = Vec::with_capacity(norms.len());
    for (i, k) in norms.iter().enumerate() {
        let mut rng = streams.stream(Purpose::Dither, i as u64, 0, 0);
        checks.push(check_one(&x, &QuantizerConfig { norm: *k, ..cfg }, trials, &mut rng)?);
    }
    let find = |k: NormKind| checks.iter().find(|c| c.norm == k.to_string()).expect("norm checked");
    let le = |a: &NormCheck, b: &NormCheck| {
        a.mean_sq_error <= b.mean_sq_error + 3.0 * a.mean_sq_error_se.hypot(b.mean_sq_error_se)
    };
    let (inf, two, one) = (find(NormKind::Infinity), find(NormKind::P(2.0)), find(NormKind::P(1.0)));
    let ordered = le(inf, two) && le(two, one);
    let pass = ordered && checks.iter().all(|c| c.unbiased && c.variance_ok);
    Ok(QuantCheckReport {
        bits,
        norm: norm.to_string(),
        d,
        trials,
        seed,
        analytic_c: cfg.analytic_c(d),
        checks,
        ordered,
        pass,
    })
}
