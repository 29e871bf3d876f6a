use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leadopt::algorithms::{concrete_params, ProblemConstants, Schedule, ConstantStep};
use leadopt::compression::NormKind;
use leadopt::exec::Executor;
use leadopt::quantcheck::{quantcheck, QuantCheckReport};
use leadopt::simulator::{run, ExperimentConfig, RunSummary};
use leadopt::topology::MixingMatrix;
use leadopt::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "leadopt", version, about = "Decentralized optimization with compressed gossip")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write one CSV per (algorithm, seed).
    Run(RunArgs),
    /// Print admissible parameter ranges and rate constants as JSON.
    Params(ParamsArgs),
    /// Monte-Carlo check of the quantizer's unbiasedness and variance bound.
    Quantcheck(QuantArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Print the summary as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Replace the configured seeds with this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective config and exit without running.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long = "L")]
    lipschitz: f64,
    /// Compression constant; 0 for exact communication.
    #[arg(long = "C", default_value_t = 0.0)]
    c: f64,
    #[arg(long, required_unless_present = "ring", conflicts_with = "ring")]
    beta: Option<f64>,
    #[arg(long, required_unless_present = "ring", conflicts_with = "ring")]
    kappa_g: Option<f64>,
    /// Take beta and kappa_g from a ring of this many agents.
    #[arg(long)]
    ring: Option<usize>,
    #[arg(long, default_value_t = 1.0 / 3.0, requires = "ring")]
    self_weight: f64,
    /// Constant step size; defaults to 1/L.
    #[arg(long)]
    eta: Option<f64>,
    /// Candidate (gamma, alpha) to certify; defaults to the concrete choice.
    #[arg(long, requires = "alpha")]
    gamma: Option<f64>,
    #[arg(long, requires = "gamma")]
    alpha: Option<f64>,
    /// Diminishing-schedule theta4; defaults to mu/(2 C beta).
    #[arg(long)]
    theta4: Option<f64>,
}

#[derive(Args)]
struct QuantArgs {
    #[arg(long, default_value_t = 2)]
    bits: u32,
    /// Norm: a number >= 1 or "inf".
    #[arg(long, default_value = "inf")]
    p: NormKind,
    #[arg(long, default_value_t = 512)]
    d: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

/// Bad input: exit 2.
const USAGE: u8 = 2;

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Numeric(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Params(a) => cmd_params(a),
        Command::Quantcheck(a) => cmd_quantcheck(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(USAGE)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

macro_rules! out {
    ($($t:tt)*) => { emit(&format!($($t)*)) };
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_file(&a.config)
        .map_err(|e| Failure::Usage(format!("{}: {e}", a.config.display())))?;
    if let Some(s) = a.seed {
        cfg.seeds = vec![s];
    }
    if a.dump_config {
        emit(&cfg.to_json_pretty());
        return Ok(());
    }
    let out = a.out.expect("clap enforces --out");
    let exec = Executor::from_env()?;
    eprintln!(
        "running {} algorithm(s) x {} seed(s), {} rounds, {} thread(s)",
        cfg.algorithms.len(),
        cfg.seeds.len(),
        cfg.rounds,
        exec.threads()
    );
    let results = run(&cfg, &exec)?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let mut summaries: Vec<RunSummary> = Vec::with_capacity(results.len());
    for r in &results {
        let path = out.join(r.file_name());
        fs::write(&path, r.csv_string()).map_err(|e| io_err(&path, e))?;
        summaries.push(r.summary());
    }
    let text = serde_json::to_string_pretty(&summaries).expect("summary serializes");
    let path = out.join("summary.json");
    fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    let path = out.join("config.json");
    fs::write(&path, cfg.to_json_pretty()).map_err(|e| io_err(&path, e))?;

    if a.json {
        emit(&text);
    } else {
        for s in &summaries {
            out!(
                "{:<5} seed {:<6} rounds {:<7} dist_opt {:.3e}  consensus {:.3e}  rate {}  bits {}{}",
                s.algorithm.name(),
                s.seed,
                s.rounds_completed,
                s.final_dist_opt,
                s.final_consensus,
                s.fitted_rate.map_or("-".into(), |r| format!("{r:.5}")),
                s.total_bits,
                if s.diverged { "  DIVERGED" } else { "" }
            );
        }
        out!("wrote {}", out.display());
    }
    Ok(())
}

fn params_json(a: &ParamsArgs) -> Result<Value, Failure> {
    let consts = match a.ring {
        Some(n) => {
            let m = MixingMatrix::ring(n, a.self_weight)?;
            ProblemConstants { mu: a.mu, lipschitz: a.lipschitz, c: a.c, beta: m.beta(), lambda_max_pinv: m.lambda_max_pinv() }
        }
        None => {
            let (beta, kg) = (a.beta.expect("clap"), a.kappa_g.expect("clap"));
            if !(kg >= 1.0 && kg.is_finite()) {
                return Err(Failure::Usage(format!("kappa_g must be finite and >= 1, got {kg}")));
            }
            ProblemConstants::with_kappa_g(a.mu, a.lipschitz, a.c, beta, kg)
        }
    };
    consts.validate()?;
    let eta = a.eta.unwrap_or(1.0 / consts.lipschitz);
    let thm = ConstantStep::new(consts, eta)?;
    let cor = concrete_params(&consts)?;
    let (gamma, alpha) = match (a.gamma, a.alpha) {
        (Some(g), Some(al)) => (g, al),
        _ => (cor.params.gamma, cor.params.alpha),
    };
    let cert = thm.certify(gamma, alpha);
    let schedule = if consts.c == 0.0 {
        json!({ "defined": false, "reason": "the diminishing schedule needs C > 0" })
    } else {
        let theta4 = a.theta4.unwrap_or(consts.mu / (2.0 * consts.c * consts.beta));
        let s = Schedule::new(consts, theta4)?;
        let first: Vec<Value> = [0u64, 1, 10, 100, 1000]
            .iter()
            .map(|&k| {
                let p = s.at(k);
                json!({ "k": k, "eta": p.eta, "gamma": p.gamma, "alpha": p.alpha })
            })
            .collect();
        json!({ "defined": true, "thetas": s.thetas, "steps": first })
    };
    Ok(json!({
        "constants": {
            "mu": consts.mu,
            "L": consts.lipschitz,
            "C": consts.c,
            "beta": consts.beta,
            "kappa_g": consts.kappa_g(),
            "kappa_f": consts.kappa_f(),
            "lambda_max_pinv": consts.lambda_max_pinv,
        },
        "constant_step": {
            "eta": eta,
            "eta_max": 2.0 / (consts.mu + consts.lipschitz),
            "m": thm.m,
            "gamma_range": cert.gamma_range,
            "certificate": cert,
            "admissible": cert.admissible(),
        },
        "concrete": cor,
        "diminishing": schedule,
    }))
}

fn cmd_params(a: ParamsArgs) -> Result<(), Failure> {
    let v = params_json(&a)?;
    emit(&serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn print_quant(r: &QuantCheckReport) {
    out!(
        "quantcheck: b = {}, p = {}, d = {}, trials = {}, seed = {}",
        r.bits, r.norm, r.d, r.trials, r.seed
    );
    out!("analytic C bound: {:.6e}", r.analytic_c);
    out!("{:<6} {:>12} {:>12} {:>12} {:>10} {:>9} {:>9}", "norm", "mean_sq_err", "rel_err", "emp_C", "bias", "unbiased", "var_ok");
    for c in &r.checks {
        out!(
            "{:<6} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3} {:>9} {:>9}",
            c.norm, c.mean_sq_error, c.relative_error, c.empirical_c, c.bias_ratio, c.unbiased, c.variance_ok
        );
    }
    out!("ordering inf <= 2 <= 1: {}", if r.ordered { "holds" } else { "violated" });
    out!("{}", if r.pass { "PASS" } else { "FAIL" });
}

fn cmd_quantcheck(a: QuantArgs) -> Result<(), Failure> {
    let r = quantcheck(a.bits, a.p, a.d, a.trials, a.seed)?;
    if a.json {
        emit(&serde_json::to_string_pretty(&r).expect("json"));
    } else {
        print_quant(&r);
    }
    Ok(())
}
