//! Experiment configuration and the round engine.
//!
//! A run is fully determined by `(config, seed)`: every random draw comes
//! from a keyed stream, so results do not depend on the thread count.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    consensus_error, concrete_params, dgd_step, lead_init, lead_step, nids_step, LeadContext, LeadParams,
    LyapunovRef, ProblemConstants, Schedule,
};
use crate::compression::{Compressor, QuantizerConfig, RAW_BITS_PER_ELEMENT};
use crate::exec::Executor;
use crate::problems::{gen_linreg, logreg_from_dataset, Dataset, GradientNoise, LinRegSpec, LogRegSpec, Problem};
use crate::rng::{Purpose, Streams};
use crate::topology::MixingMatrix;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Any entry above this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

pub const CSV_HEADER: &str = "round,dist_opt,consensus,loss_avg,comp_err,bits_cum,lyapunov";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Ring { n: usize, self_weight: f64 },
    FullyConnected { n: usize },
    /// Dense CSV matrix.
    File { path: PathBuf },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Ring { n: 8, self_weight: 1.0 / 3.0 }
    }
}

impl TopologySpec {
    pub fn build(&self) -> Result<MixingMatrix> {
        match self {
            TopologySpec::Ring { n, self_weight } => MixingMatrix::ring(*n, *self_weight),
            TopologySpec::FullyConnected { n } => MixingMatrix::fully_connected(*n),
            TopologySpec::File { path } => MixingMatrix::from_csv_file(path),
        }
    }
}

/// Logistic data read from disk instead of synthesized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Linreg(LinRegSpec),
    Logreg {
        #[serde(flatten)]
        spec: LogRegSpec,
        /// When set, `d` and `samples_per_agent` are ignored.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<CsvSource>,
    },
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::Linreg(LinRegSpec::default())
    }
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        match self {
            ProblemSpec::Linreg(s) => s.n,
            ProblemSpec::Logreg { spec, .. } => spec.n,
        }
    }

    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Linreg(s) => gen_linreg(s),
            ProblemSpec::Logreg { spec, csv: None } => crate::problems::gen_logreg(spec),
            ProblemSpec::Logreg { spec, csv: Some(src) } => {
                let data = Dataset::load_csv(&src.path, &src.label_column)?;
                logreg_from_dataset(&data, spec.n, spec.lambda, spec.partition, spec.seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Lead,
    Nids,
    Dgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Lead => "lead",
            Algorithm::Nids => "nids",
            Algorithm::Dgd => "dgd",
        }
    }
}

/// How `(η, γ, α)` are chosen. NIDS and DGD only use `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamMode {
    Manual { eta: f64, gamma: f64, alpha: f64 },
    /// `η = 1/L` with the matching concrete `(γ, α)`.
    Theory,
    /// `θ₄` defaults to `μ/(2Cβ)`.
    Diminishing {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta4: Option<f64>,
    },
}

impl Default for ParamMode {
    fn default() -> Self {
        ParamMode::Manual { eta: 0.1, gamma: 1.0, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Zeros,
    /// Entries drawn `N(0, scale²)` from the seed's init stream.
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub topology: TopologySpec,
    pub problem: ProblemSpec,
    pub gradient: GradientNoise,
    pub algorithms: Vec<Algorithm>,
    /// `null` sends uncompressed vectors.
    pub quantizer: Option<QuantizerConfig>,
    pub params: ParamMode,
    pub rounds: u64,
    pub seeds: Vec<u64>,
    pub record_lyapunov: bool,
    pub init: InitSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            topology: TopologySpec::default(),
            problem: ProblemSpec::default(),
            gradient: GradientNoise::Exact,
            algorithms: vec![Algorithm::Lead, Algorithm::Nids, Algorithm::Dgd],
            quantizer: Some(QuantizerConfig::default()),
            params: ParamMode::default(),
            rounds: 1000,
            seeds: vec![0],
            record_lyapunov: false,
            init: InitSpec::Zeros,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths are resolved against the file's
    /// directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json_str(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TopologySpec::File { path } = &mut self.topology {
            fix(path);
        }
        if let ProblemSpec::Logreg { csv: Some(src), .. } = &mut self.problem {
            fix(&mut src.path);
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must list at least one algorithm".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return bad(format!("algorithm {} is listed twice", a.name()));
            }
        }
        let tn = match &self.topology {
            TopologySpec::Ring { n, .. } | TopologySpec::FullyConnected { n } => Some(*n),
            TopologySpec::File { .. } => None,
        };
        if let Some(tn) = tn {
            if tn != self.problem.n() {
                return bad(format!("topology has {tn} agents but problem.n = {}", self.problem.n()));
            }
        }
        if let Some(q) = &self.quantizer {
            q.validate().map_err(|e| Error::Config(format!("quantizer: {e}")))?;
        }
        self.gradient.validate().map_err(|e| Error::Config(format!("gradient: {e}")))?;
        match self.params {
            ParamMode::Manual { eta, gamma, alpha } => {
                LeadParams::new(eta, gamma, alpha).map_err(|e| Error::Config(format!("params: {e}")))?;
            }
            ParamMode::Diminishing { .. } if self.quantizer.is_none() => {
                return bad("params: the diminishing schedule needs a quantizer (C > 0)".into());
            }
            _ => {}
        }
        if let InitSpec::Random { scale } = self.init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return bad(format!("init: scale must be finite and >= 0, got {scale}"));
            }
        }
        Ok(())
    }
}

/// Metrics after `round` communication rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub round: u64,
    /// `‖X − X*‖_F`
    pub dist_opt: f64,
    /// `‖X − 1X̄‖_F`
    pub consensus: f64,
    /// `f(X̄)`
    pub loss_avg: f64,
    /// `‖Ŷ − Y‖_F` of this round.
    pub comp_err: f64,
    pub bits_cum: u64,
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `‖X⁰ − X*‖_F`.
    pub initial_dist_opt: f64,
    pub records: Vec<MetricsRecord>,
    pub diverged: bool,
    /// Contraction factor certified for theory-mode parameters.
    pub theoretical_rho: Option<f64>,
    #[serde(skip)]
    pub final_x: DMatrix<f64>,
}

impl RunResult {
    /// `[‖X⁰−X*‖, ‖X¹−X*‖, …]`.
    pub fn dist_series(&self) -> Vec<f64> {
        std::iter::once(self.initial_dist_opt).chain(self.records.iter().map(|r| r.dist_opt)).collect()
    }

    pub fn lyapunov_series(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.lyapunov).collect()
    }

    pub fn csv_string(&self) -> String {
        let mut out = Vec::new();
        write_csv(&self.records, &mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii")
    }

    pub fn file_name(&self) -> String {
        format!("{}_seed{}.csv", self.algorithm.name(), self.seed)
    }

    pub fn summary(&self) -> RunSummary {
        let last = self.records.last();
        RunSummary {
            algorithm: self.algorithm,
            seed: self.seed,
            rounds_completed: last.map_or(0, |r| r.round),
            final_dist_opt: last.map_or(self.initial_dist_opt, |r| r.dist_opt),
            final_consensus: last.map_or(f64::NAN, |r| r.consensus),
            fitted_rate: empirical_rate(&self.dist_series()).ok(),
            theoretical_rho: self.theoretical_rho,
            total_bits: last.map_or(0, |r| r.bits_cum),
            diverged: self.diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds_completed: u64,
    pub final_dist_opt: f64,
    pub final_consensus: f64,
    /// Per-round contraction of `dist_opt` over the geometric phase.
    pub fitted_rate: Option<f64>,
    pub theoretical_rho: Option<f64>,
    pub total_bits: u64,
    pub diverged: bool,
}

pub fn write_csv(records: &[MetricsRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let lyap = r.lyapunov.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{},{}",
            r.round, r.dist_opt, r.consensus, r.loss_avg, r.comp_err, r.bits_cum, lyap
        )?;
    }
    Ok(())
}

/// A built experiment: network, problem and compressor shared by all seeds.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub mixing: MixingMatrix,
    pub problem: Problem,
    pub compressor: Compressor,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mixing = config.topology.build()?;
        let problem = config.problem.build()?;
        if mixing.n() != problem.n() {
            return Err(Error::Config(format!(
                "topology has {} agents but the problem has {}",
                mixing.n(),
                problem.n()
            )));
        }
        let compressor = config.quantizer.map_or(Compressor::Identity, Compressor::Quantized);
        Ok(Self { config: config.clone(), mixing, problem, compressor })
    }

    pub fn constants(&self) -> ProblemConstants {
        ProblemConstants::from_parts(&self.problem, &self.mixing, self.compressor.c_constant(self.problem.d()))
    }

    pub fn initial_iterate(&self, seed: u64) -> DMatrix<f64> {
        let (n, d) = (self.problem.n(), self.problem.d());
        match self.config.init {
            InitSpec::Zeros => DMatrix::zeros(n, d),
            InitSpec::Random { scale } => {
                let streams = Streams::new(seed);
                let mut rows = Vec::with_capacity(n);
                for i in 0..n {
                    let mut rng = streams.stream(Purpose::Init, 0, i as u64, 0);
                    rows.push((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
                }
                DMatrix::from_fn(n, d, |i, j| rows[i][j])
            }
        }
    }

    /// Step sizes for round `k` (`k = 0` is the initial gradient step) and
    /// the certified rate when one exists.
    fn schedule(&self) -> Result<(Box<dyn Fn(u64) -> LeadParams + '_>, Option<f64>)> {
        match self.config.params {
            ParamMode::Manual { eta, gamma, alpha } => {
                let p = LeadParams::new(eta, gamma, alpha)?;
                Ok((Box::new(move |_| p), None))
            }
            ParamMode::Theory => {
                let c = concrete_params(&self.constants())?;
                let p = c.params;
                Ok((Box::new(move |_| p), Some(c.rho_bound)))
            }
            ParamMode::Diminishing { theta4 } => {
                let k = self.constants();
                let theta4 = theta4.unwrap_or(if k.c > 0.0 { k.mu / (2.0 * k.c * k.beta) } else { 0.0 });
                let s = Schedule::new(k, theta4)?;
                Ok((Box::new(move |r| s.at(r)), None))
            }
        }
    }

    pub fn run_one(&self, algorithm: Algorithm, seed: u64, exec: &Executor) -> Result<RunResult> {
        let (params_at, theoretical_rho) = self.schedule()?;
        let theoretical_rho = theoretical_rho.filter(|_| algorithm == Algorithm::Lead);
        let p = &self.problem;
        let (n, d) = (p.n(), p.d());
        let x_star = p.optimum_matrix();
        let streams = Streams::new(seed);
        let noise = &self.config.gradient;
        let x0 = self.initial_iterate(seed);
        let initial_dist_opt = (&x0 - &x_star).norm();
        let raw_bits = n as u64 * d as u64 * RAW_BITS_PER_ELEMENT;
        let lyap_ref = (self.config.record_lyapunov && algorithm == Algorithm::Lead)
            .then(|| LyapunovRef::new(p, &self.mixing, self.compressor.c_constant(d)));
        let ctx = LeadContext {
            problem: p,
            mixing: &self.mixing,
            compressor: &self.compressor,
            noise,
            streams,
            exec,
        };

        let mut records = Vec::with_capacity(self.config.rounds as usize);
        let mut diverged = false;
        let mut bits_cum = 0u64;
        let record = |k: u64, x: &DMatrix<f64>, comp_err: f64, bits_cum: u64, lyap: Option<f64>| MetricsRecord {
            round: k,
            dist_opt: (x - &x_star).norm(),
            consensus: consensus_error(x),
            loss_avg: p.value(&x.row_mean().transpose()),
            comp_err,
            bits_cum,
            lyapunov: lyap,
        };

        let final_x = match algorithm {
            Algorithm::Lead => {
                let mut state = lead_init(&ctx, &params_at(0), &x0, None)?;
                for k in 1..=self.config.rounds {
                    let prm = params_at(k);
                    let trace = match lead_step(&mut state, &ctx, &prm) {
                        Ok(t) => t,
                        Err(Error::NonFiniteInput { .. } | Error::Numeric(_)) => {
                            diverged = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    };
                    if is_diverged(&state.x) {
                        diverged = true;
                        break;
                    }
                    bits_cum += trace.bits;
                    let lyap = lyap_ref.as_ref().map(|r| r.value(&state.x, &state.d_dual, &state.h, &prm));
                    records.push(record(k, &state.x, trace.comp_err, bits_cum, lyap));
                }
                state.x
            }
            Algorithm::Nids => {
                let eta0 = params_at(0).eta;
                let mut g_prev = p.stochastic_gradient(&x0, noise, &streams, 0, exec)?.value;
                let mut x_prev = x0.clone();
                let mut x = &x0 - &g_prev * eta0;
                for k in 1..=self.config.rounds {
                    let g = p.stochastic_gradient(&x, noise, &streams, k, exec)?.value;
                    let next = nids_step(&x, &x_prev, &g, &g_prev, &self.mixing, params_at(k).eta)?;
                    if is_diverged(&next) {
                        diverged = true;
                        break;
                    }
                    x_prev = std::mem::replace(&mut x, next);
                    g_prev = g;
                    bits_cum += raw_bits;
                    records.push(record(k, &x, 0.0, bits_cum, None));
                }
                x
            }
            Algorithm::Dgd => {
                let mut x = x0.clone();
                for k in 1..=self.config.rounds {
                    let g = p.stochastic_gradient(&x, noise, &streams, k, exec)?.value;
                    let next = dgd_step(&x, &g, &self.mixing, params_at(k).eta)?;
                    if is_diverged(&next) {
                        diverged = true;
                        break;
                    }
                    x = next;
                    bits_cum += raw_bits;
                    records.push(record(k, &x, 0.0, bits_cum, None));
                }
                x
            }
        };
        Ok(RunResult { algorithm, seed, initial_dist_opt, records, diverged, theoretical_rho, final_x })
    }
}

fn is_diverged(x: &DMatrix<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Runs every `(algorithm, seed)` pair, algorithms outermost, in config order.
pub fn run(config: &ExperimentConfig, exec: &Executor) -> Result<Vec<RunResult>> {
    let exp = Experiment::build(config)?;
    let mut out = Vec::new();
    for &a in &config.algorithms {
        for &s in &config.seeds {
            out.push(exp.run_one(a, s, exec)?);
        }
    }
    Ok(out)
}

/// Least-squares fit of `log v_k = a + b k` over the entries within
/// `[1e−10·v₀, 0.1·v₀]`; returns `e^b`.
pub fn empirical_rate(series: &[f64]) -> Result<f64> {
    let first = *series
        .first()
        .ok_or_else(|| Error::InsufficientDecay("empty series".into()))?;
    let (lo, hi) = (1e-10 * first, 0.1 * first);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0 && **v >= lo && **v <= hi)
        .map(|(k, v)| (k as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientDecay(format!(
            "{} points inside the fit window [{lo:e}, {hi:e}]",
            pts.len()
        )));
    }
    Ok(ls_slope(&pts).exp())
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Slope of `log v` against `log k` for the `(k, v)` pairs with `k, v > 0`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, v)| *k > 0.0 && *v > 0.0)
        .map(|(k, v)| (k.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientDecay("need two positive points for a log-log fit".into()));
    }
    Ok(ls_slope(&pts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauReport {
    /// Median of the last quarter of the series.
    pub plateau: f64,
    /// `safety·η²σ²/(1−ρ)`.
    pub bound: f64,
    pub within_bound: bool,
    /// False when the last quarter is still moving by more than 2x.
    pub reached: bool,
}

pub const PLATEAU_SAFETY: f64 = 10.0;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Checks a squared-distance series (per agent) against the noise floor.
pub fn stochastic_plateau(series: &[f64], eta: f64, sigma_sq: f64, rho: f64) -> Result<PlateauReport> {
    let q = series.len() / 4;
    if q < 2 {
        return Err(Error::InsufficientDecay("series too short for a plateau estimate".into()));
    }
    let tail = &series[series.len() - q..];
    let plateau = median(&mut tail.to_vec());
    let bound = PLATEAU_SAFETY * eta * eta * sigma_sq / (1.0 - rho);
    let a = median(&mut tail[..q / 2].to_vec());
    let b = median(&mut tail[q / 2..].to_vec());
    let reached = a == b || (a > 0.0 && b > 0.0 && (a / b).max(b / a) <= 2.0);
    Ok(PlateauReport { plateau, bound, within_bound: plateau <= bound, reached })
}

/// `(1/n)‖X − 1X̄‖² ≤ safety·(2L⁰/n)ρᵏ`.
pub fn consensus_bound(l0: f64, n: usize, rho: f64, k: u64, safety: f64) -> f64 {
    safety * 2.0 * l0 / n as f64 * rho.powf(k as f64)
}
