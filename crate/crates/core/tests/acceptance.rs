//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line; run with `--nocapture` to see them.

use std::time::Instant;

use leadopt::algorithms::{
    concrete_params, lead_init, lead_step, nids_step, AgentSwarm, LeadContext, LeadParams,
    LyapunovRef, ProblemConstants, Schedule, ConstantStep,
};
use leadopt::compression::{quantize, decode, Compressor, NormKind, QuantizerConfig, SeqDither};
use leadopt::exec::Executor;
use leadopt::problems::{gen_linreg, gen_logreg, GradientNoise, LinRegSpec, LogRegSpec, Problem};
use leadopt::rng::Streams;
use leadopt::simulator::{
    consensus_bound, empirical_rate, loglog_slope, stochastic_plateau, Algorithm, Experiment, ExperimentConfig,
    ParamMode, ProblemSpec,
};
use leadopt::topology::MixingMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const NSEEDS: usize = 10;
const SEEDS: std::ops::Range<u64> = 0..NSEEDS as u64;

fn report(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn ring8() -> MixingMatrix {
    MixingMatrix::ring(8, 1.0 / 3.0).unwrap()
}

fn quad_spec() -> LinRegSpec {
    LinRegSpec { n: 8, d: 64, rows_per_agent: 256, lambda: 0.1, noise: 0.1, seed: 7 }
}

fn quad() -> Problem {
    gen_linreg(&quad_spec()).unwrap()
}

fn two_bit() -> Compressor {
    Compressor::Quantized(QuantizerConfig::new(2, NormKind::Infinity, 512).unwrap())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) }
}

/// `Φ(−5)`: one-sided probability of a 5 standard error excursion.
const FIVE_SIGMA_TAIL: f64 = 2.866_515_718_791_939e-7;

/// Probability of a count at least as far from the mean as `k`, on its side.
fn binomial_tail(n: u64, p: f64, k: u64) -> f64 {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let b = Binomial::new(p, n).unwrap();
    if k as f64 >= n as f64 * p {
        if k == 0 { 1.0 } else { b.sf(k - 1) }
    } else {
        b.cdf(k)
    }
}

#[test]
fn criterion_01_quantizer_unbiased_with_bounded_variance() {
    let start = Instant::now();
    let d = 512;
    let draws = 10_000;
    let exec = Executor::from_env().unwrap();
    let norms = [NormKind::P(1.0), NormKind::P(2.0), NormKind::Infinity];
    let results = exec.map(50, |v| {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + v as u64);
        let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let mut worst_z: f64 = 0.0;
        let mut min_tail: f64 = 1.0;
        let mut var_ok = true;
        let mut errs = [0.0; 3];
        for (pi, norm) in norms.iter().enumerate() {
            let cfg = QuantizerConfig::new(2, *norm, d).unwrap();
            // exact two-point variance on the transmitted grid
            let scale = f64::from(quantize(&x, &cfg, &mut SeqDither(&mut rng)).unwrap().blocks[0].norm);
            let step = scale / f64::from(1u32 << (cfg.bits - 1));
            let mut sum = vec![0.0; d];
            let mut err = Vec::with_capacity(draws);
            for _ in 0..draws {
                let q = decode(&quantize(&x, &cfg, &mut SeqDither(&mut rng)).unwrap()).unwrap();
                let mut e = 0.0;
                for j in 0..d {
                    sum[j] += q[j];
                    e += (x[j] - q[j]).powi(2);
                }
                err.push(e);
            }
            let n = draws as f64;
            for j in 0..d {
                let s = x[j].abs() / step;
                let f = s - s.floor();
                let se = step * (f * (1.0 - f) / n).sqrt();
                let dev = (sum[j] / n - x[j]).abs();
                let z = if se > 0.0 { dev / se } else if dev <= 1e-12 * x[j].abs().max(1.0) { 0.0 } else { f64::INFINITY };
                worst_z = worst_z.max(z);
                // each draw rounds up with probability f, so the up-count is
                // Binomial(draws, f); use its exact tail when f is extreme
                let tail = if se > 0.0 {
                    let ups = ((sum[j].abs() / step - n * s.floor()).round()).max(0.0) as u64;
                    binomial_tail(draws as u64, f, ups)
                } else if z == 0.0 {
                    1.0
                } else {
                    0.0
                };
                min_tail = min_tail.min(tail);
            }
            let mean_err = err.iter().sum::<f64>() / n;
            let sd = (err.iter().map(|e| (e - mean_err).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let nnz = x.iter().filter(|v| **v != 0.0).count() as f64;
            let bound = 0.25 * nnz * 4f64.powi(-1) * norm.of(&x).powi(2);
            var_ok &= mean_err <= bound + 3.0 * sd / n.sqrt();
            errs[pi] = mean_err;
        }
        (worst_z, min_tail, var_ok, errs[2] <= errs[1] && errs[1] <= errs[0])
    });
    let worst_z = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let min_tail = results.iter().map(|r| r.1).fold(1.0, f64::min);
    let var_ok = results.iter().all(|r| r.2);
    let ordered = results.iter().all(|r| r.3);
    let level = FIVE_SIGMA_TAIL;
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        min_tail >= level && var_ok && ordered && secs < 30.0,
        format!(
            "smallest exact one-sided tail {min_tail:.1e} vs 5-sigma level {level:.1e} (max normal z {worst_z:.2}), variance bound {var_ok}, inf <= 2 <= 1 {ordered}, {secs:.1} s"
        ),
    );
}

struct InvariantTally {
    col_sum: f64,
    hw: f64,
    range: f64,
    avg: f64,
    rounds: usize,
}

fn check_invariants(
    p: &Problem,
    w: &MixingMatrix,
    comp: &Compressor,
    noise: &GradientNoise,
    params: &dyn Fn(u64) -> LeadParams,
    rounds: u64,
    seed: u64,
    t: &mut InvariantTally,
) {
    let exec = Executor::sequential();
    let ctx = LeadContext { problem: p, mixing: w, compressor: comp, noise, streams: Streams::new(seed), exec: &exec };
    let x0 = DMatrix::from_fn(p.n(), p.d(), |i, j| ((i * 31 + j) as f64 * 0.37).sin());
    let mut s = lead_init(&ctx, &params(0), &x0, None).unwrap();
    for k in 1..=rounds {
        let prm = params(k);
        let x_old = s.x.clone();
        let tr = lead_step(&mut s, &ctx, &prm).unwrap();
        let scale = s.x.norm().max(s.d_dual.norm()).max(s.h.norm()).max(1.0);
        t.col_sum = t.col_sum.max(s.d_dual.row_sum().norm() / scale);
        t.hw = t.hw.max((&s.h_w - w.mix(&s.h)).norm() / scale);
        let dn = s.d_dual.norm();
        if dn > 0.0 {
            let proj = w.pinv_iw() * w.laplacian(&s.d_dual);
            t.range = t.range.max((proj - &s.d_dual).norm() / dn);
        }
        let avg = s.x.row_mean() - x_old.row_mean() + tr.grad.row_mean() * prm.eta;
        t.avg = t.avg.max(avg.norm());
        t.rounds += 1;
    }
}

#[test]
fn criterion_02_exact_invariants() {
    let w = ring8();
    let mut t = InvariantTally { col_sum: 0.0, hw: 0.0, range: 0.0, avg: 0.0, rounds: 0 };
    let q = quad();
    let logi = gen_logreg(&LogRegSpec { n: 8, d: 10, samples_per_agent: 50, ..Default::default() }).unwrap();
    let fixed = |p: &Problem| {
        let eta = 0.5 / p.lipschitz();
        move |_| LeadParams::new(eta, 1.0, 0.5).unwrap()
    };
    let consts = ProblemConstants::from_parts(&q, &w, two_bit().c_constant(64));
    let theory = concrete_params(&consts).unwrap().params;
    let sched = Schedule::new(consts, consts.mu / (2.0 * consts.c * consts.beta)).unwrap();
    let add = GradientNoise::Additive { sigma: 0.5 };
    let mb = GradientNoise::Minibatch { size: 8 };
    let mb_quad = GradientNoise::Minibatch { size: 128 };
    for seed in 0..3 {
        check_invariants(&q, &w, &two_bit(), &GradientNoise::Exact, &fixed(&q), 300, seed, &mut t);
        check_invariants(&q, &w, &two_bit(), &add, &|_| theory, 300, seed, &mut t);
        check_invariants(&q, &w, &two_bit(), &mb_quad, &|k| sched.at(k), 300, seed, &mut t);
        check_invariants(&q, &w, &Compressor::Identity, &add, &fixed(&q), 300, seed, &mut t);
        check_invariants(&logi, &w, &two_bit(), &GradientNoise::Exact, &fixed(&logi), 300, seed, &mut t);
        check_invariants(&logi, &w, &two_bit(), &mb, &fixed(&logi), 300, seed, &mut t);
    }
    let ok = t.col_sum <= 1e-9 && t.hw <= 1e-9 && t.range <= 1e-8 && t.avg <= 1e-10;
    report(
        2,
        ok,
        format!(
            "{} rounds: 1'D {:.1e}, H_w - WH {:.1e}, range {:.1e}, average recursion {:.1e}",
            t.rounds, t.col_sum, t.hw, t.range, t.avg
        ),
    );
}

#[test]
fn criterion_03_nids_reduction_and_agent_form() {
    let p = quad();
    let w = ring8();
    let exec = Executor::sequential();
    let eta = 1.0 / p.lipschitz();
    let prm = LeadParams::new(eta, 1.0, 0.5).unwrap();
    let x0 = DMatrix::zeros(8, 64);

    let ident = Compressor::Identity;
    let ctx = LeadContext { problem: &p, mixing: &w, compressor: &ident, noise: &GradientNoise::Exact, streams: Streams::new(0), exec: &exec };
    let mut s = lead_init(&ctx, &prm, &x0, None).unwrap();
    let mut g_prev = p.gradient(&x0).unwrap().value;
    let mut prev = x0.clone();
    let mut cur = &x0 - &g_prev * eta;
    let mut nids_gap: f64 = (&cur - &s.x).norm();
    for _ in 0..100 {
        lead_step(&mut s, &ctx, &prm).unwrap();
        let g = p.gradient(&cur).unwrap().value;
        let next = nids_step(&cur, &prev, &g, &g_prev, &w, eta).unwrap();
        prev = std::mem::replace(&mut cur, next);
        g_prev = g;
        nids_gap = nids_gap.max((&cur - &s.x).norm());
    }

    let comp = two_bit();
    let noise = GradientNoise::Additive { sigma: 0.1 };
    let ctx = LeadContext { problem: &p, mixing: &w, compressor: &comp, noise: &noise, streams: Streams::new(1), exec: &exec };
    let mut s = lead_init(&ctx, &prm, &x0, None).unwrap();
    let mut agents = AgentSwarm::from_state(&s);
    let mut agent_gap: f64 = 0.0;
    for _ in 0..200 {
        lead_step(&mut s, &ctx, &prm).unwrap();
        agents.step(&ctx, &prm).unwrap();
        agent_gap = agent_gap.max((agents.x() - &s.x).norm());
    }
    report(
        3,
        nids_gap <= 1e-12 && agent_gap <= 1e-12,
        format!("NIDS gap {nids_gap:.1e} over 100 rounds, agent-form gap {agent_gap:.1e} over 200 rounds"),
    );
}

fn theory_config(rounds: u64) -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemSpec::Linreg(quad_spec()),
        algorithms: vec![Algorithm::Lead],
        quantizer: Some(QuantizerConfig::new(2, NormKind::Infinity, 512).unwrap()),
        params: ParamMode::Theory,
        rounds,
        seeds: SEEDS.collect(),
        record_lyapunov: true,
        ..Default::default()
    }
}

#[test]
fn criterion_04_linear_convergence() {
    let start = Instant::now();
    let cfg = theory_config(6000);
    let exp = Experiment::build(&cfg).unwrap();
    let cor = concrete_params(&exp.constants()).unwrap();
    let rho = cor.rho_bound;
    let reference = LyapunovRef::new(&exp.problem, &exp.mixing, exp.constants().c);
    let per_seed = Executor::from_env().unwrap().map(NSEEDS, |i| {
        let seed = i as u64;
        let r = exp.run_one(Algorithm::Lead, seed, &Executor::sequential()).unwrap();
        let x0 = exp.initial_iterate(seed);
        let l0 = reference.value(&x0, &DMatrix::zeros(8, 64), &DMatrix::zeros(8, 64), &cor.params);
        let mut series = vec![l0];
        series.extend(r.lyapunov_series());
        let (lo, hi) = (1e-10 * l0, 0.1 * l0);
        let (mut inside, mut good) = (0, 0);
        for k in 0..series.len() - 1 {
            if series[k] >= lo && series[k] <= hi {
                inside += 1;
                if series[k + 1] / series[k] <= rho + 0.02 {
                    good += 1;
                }
            }
        }
        let frac = if inside > 0 { good as f64 / inside as f64 } else { 0.0 };
        let last = r.records.last().unwrap().dist_opt / r.initial_dist_opt;
        (frac, last, empirical_rate(&series).unwrap_or(f64::NAN), r.diverged)
    });
    let frac = median(per_seed.iter().map(|r| r.0).collect());
    let worst_reach = per_seed.iter().map(|r| r.1).fold(0.0, f64::max);
    let diverged = per_seed.iter().any(|r| r.3);
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        frac >= 0.95 && worst_reach <= 1e-8 && !diverged && secs < 10.0,
        format!(
            "kappa_f = {:.2}, C = {}, rho = {rho:.5} ({:?}), median fraction of contracting rounds {frac:.3}, fitted Lyapunov rate {:.5}, worst final dist ratio {worst_reach:.1e}, {secs:.1} s",
            exp.problem.kappa_f(),
            exp.constants().c,
            cor.case,
            median(per_seed.iter().map(|r| r.2).collect())
        ),
    );
}

#[test]
fn criterion_05_heterogeneity_separation() {
    // DGD needs eta < (1 + lambda_min(W))/L, so both use half of 1/L.
    let mut cfg = theory_config(6000);
    cfg.seeds = vec![0];
    cfg.record_lyapunov = false;
    let p = quad();
    cfg.params = ParamMode::Manual { eta: 0.5 / p.lipschitz(), gamma: 1.0, alpha: 0.5 };
    let exp = Experiment::build(&cfg).unwrap();
    let exec = Executor::sequential();
    let lead = exp.run_one(Algorithm::Lead, 0, &exec).unwrap();
    let dgd = exp.run_one(Algorithm::Dgd, 0, &exec).unwrap();
    let lead_ratio = lead.records.last().unwrap().dist_opt / lead.initial_dist_opt;
    let tail: Vec<f64> = dgd.records[dgd.records.len() * 3 / 4..].iter().map(|m| m.dist_opt).collect();
    let dgd_floor = tail.iter().cloned().fold(f64::INFINITY, f64::min) / dgd.initial_dist_opt;
    let dgd_drift = (tail[tail.len() - 1] - tail[0]).abs() / tail[0];
    report(
        5,
        !dgd.diverged && dgd_drift < 1e-3 && dgd_floor > 1e-3 && lead_ratio <= 1e-8,
        format!("eta = 0.5/L, gamma = 1, alpha = 0.5: DGD settles at {dgd_floor:.2e} (tail drift {dgd_drift:.1e}), compressed LEAD at {lead_ratio:.2e} of initial distance"),
    );
}

/// Per-agent squared distance series of a LEAD run with fixed parameters.
fn noisy_run(p: &Problem, w: &MixingMatrix, prm: LeadParams, sigma: f64, rounds: u64, seed: u64) -> Vec<f64> {
    let exec = Executor::sequential();
    let comp = two_bit();
    let noise = GradientNoise::Additive { sigma };
    let ctx = LeadContext { problem: p, mixing: w, compressor: &comp, noise: &noise, streams: Streams::new(seed), exec: &exec };
    let xs = p.optimum_matrix();
    let mut s = lead_init(&ctx, &prm, &DMatrix::zeros(p.n(), p.d()), None).unwrap();
    (0..rounds)
        .map(|_| {
            lead_step(&mut s, &ctx, &prm).unwrap();
            (&s.x - &xs).norm_squared() / p.n() as f64
        })
        .collect()
}

#[test]
fn criterion_06_stochastic_neighbourhood() {
    let p = quad();
    let w = ring8();
    let sigma = 0.1;
    let consts = ProblemConstants::from_parts(&p, &w, two_bit().c_constant(64));
    let cor = concrete_params(&consts).unwrap();
    let full = cor.params;
    let half = LeadParams::new(full.eta / 2.0, full.gamma, full.alpha).unwrap();
    let cert_half = ConstantStep::new(consts, half.eta).unwrap().certify(half.gamma, half.alpha);
    let rounds = 16_000;
    let runs: Vec<(f64, f64, bool, bool)> = Executor::from_env().unwrap().map(NSEEDS, |i| {
        let a = noisy_run(&p, &w, full, sigma, rounds, i as u64);
        let b = noisy_run(&p, &w, half, sigma, rounds, i as u64);
        let ra = stochastic_plateau(&a, full.eta, sigma * sigma, cor.rho_bound).unwrap();
        let rb = stochastic_plateau(&b, half.eta, sigma * sigma, cert_half.rho).unwrap();
        (ra.plateau, rb.plateau, ra.within_bound && rb.within_bound, ra.reached && rb.reached)
    });
    let ratio = median(runs.iter().map(|r| r.0 / r.1).collect());
    let within = runs.iter().all(|r| r.2);
    let reached = runs.iter().all(|r| r.3);
    let bound = 10.0 * full.eta * full.eta * sigma * sigma / (1.0 - cor.rho_bound);
    report(
        6,
        within && reached && (2.0..=8.0).contains(&ratio),
        format!(
            "plateau {:.2e} vs bound {bound:.2e}, halving eta divides it by {ratio:.2} (median of {}), half-step admissible {}",
            median(runs.iter().map(|r| r.0).collect()),
            runs.len(),
            cert_half.admissible()
        ),
    );
}

#[test]
fn criterion_07_diminishing_step_rate() {
    let p = quad();
    let w = ring8();
    let comp = Compressor::Quantized(QuantizerConfig::new(4, NormKind::Infinity, 64).unwrap());
    let consts = ProblemConstants::from_parts(&p, &w, comp.c_constant(64));
    let sched = Schedule::new(consts, consts.mu / (2.0 * consts.c * consts.beta)).unwrap();
    let noise = GradientNoise::Additive { sigma: 0.5 };
    let rounds = 10_000u64;
    let series: Vec<Vec<f64>> = Executor::from_env().unwrap().map(NSEEDS, |i| {
        let exec = Executor::sequential();
        let ctx = LeadContext { problem: &p, mixing: &w, compressor: &comp, noise: &noise, streams: Streams::new(i as u64), exec: &exec };
        let xs = p.optimum_matrix();
        let mut s = lead_init(&ctx, &sched.at(0), &DMatrix::zeros(8, 64), None).unwrap();
        (1..=rounds)
            .map(|k| {
                lead_step(&mut s, &ctx, &sched.at(k)).unwrap();
                (&s.x - &xs).norm_squared() / 8.0
            })
            .collect()
    });
    let mse: Vec<f64> = (0..rounds as usize).map(|k| series.iter().map(|s| s[k]).sum::<f64>() / series.len() as f64).collect();
    let pts: Vec<(f64, f64)> = (0..=40)
        .map(|j| {
            let k = (100.0 * 100f64.powf(j as f64 / 40.0)).round() as usize;
            (k as f64, mse[k - 1])
        })
        .collect();
    let slope = loglog_slope(&pts).unwrap();
    report(
        7,
        (-1.5..=-0.6).contains(&slope),
        format!("C = {}, theta3*theta4*theta5 = {:.3e}, log-log slope over rounds 1e2..1e4 = {slope:.3}", consts.c, sched.thetas.theta3 * sched.thetas.theta4 * sched.thetas.theta5),
    );
}

#[test]
fn criterion_08_consensus_envelope() {
    let cfg = theory_config(6000);
    let exp = Experiment::build(&cfg).unwrap();
    let cor = concrete_params(&exp.constants()).unwrap();
    let reference = LyapunovRef::new(&exp.problem, &exp.mixing, exp.constants().c);
    let exec = Executor::sequential();
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let r = exp.run_one(Algorithm::Lead, seed, &exec).unwrap();
        let x0 = exp.initial_iterate(seed);
        let l0 = reference.value(&x0, &DMatrix::zeros(8, 64), &DMatrix::zeros(8, 64), &cor.params);
        for m in &r.records {
            // record k holds X^{k+1}
            let k = m.round + 1;
            if k < 5 {
                continue;
            }
            let lhs = m.consensus * m.consensus / 8.0;
            worst = worst.max(lhs / consensus_bound(l0, 8, cor.rho_bound, k, 10.0));
        }
    }
    report(8, worst <= 1.0, format!("max of consensus / envelope over rounds >= 5: {worst:.3e}"));
}

#[test]
fn criterion_09_bit_accounting() {
    let single = QuantizerConfig::new(2, NormKind::Infinity, 512).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..512).map(|_| rng.random::<f64>() - 0.5).collect();
    let msg = quantize(&x, &single, &mut SeqDither(&mut rng)).unwrap();
    let per_message = msg.bits();
    let mut ok = per_message == 1568 && single.payload_bits(512) == 1568 && single.payload_bits(1024) == 2 * 1568;
    let mut detail = format!("{per_message} bits per 512-element message");
    for (d, rounds) in [(512usize, 7u64), (1024, 5)] {
        let cfg = ExperimentConfig {
            problem: ProblemSpec::Linreg(LinRegSpec { n: 8, d, rows_per_agent: 2 * d, lambda: 0.1, noise: 0.1, seed: 1 }),
            algorithms: vec![Algorithm::Lead, Algorithm::Nids],
            quantizer: Some(single),
            rounds,
            ..Default::default()
        };
        let exp = Experiment::build(&cfg).unwrap();
        let exec = Executor::from_env().unwrap();
        let lead = exp.run_one(Algorithm::Lead, 0, &exec).unwrap();
        let nids = exp.run_one(Algorithm::Nids, 0, &exec).unwrap();
        for m in &lead.records {
            ok &= m.bits_cum == m.round * 8 * (d as u64 / 512) * 1568;
        }
        for m in &nids.records {
            ok &= m.bits_cum == m.round * 8 * d as u64 * 64;
        }
        detail.push_str(&format!(", d = {d}: {} bits after {rounds} rounds", lead.records.last().unwrap().bits_cum));
    }
    report(9, ok, detail);
}

#[test]
fn criterion_10_determinism_across_threads() {
    let cfg = ExperimentConfig {
        problem: ProblemSpec::Linreg(LinRegSpec { n: 8, d: 64, rows_per_agent: 128, ..Default::default() }),
        gradient: GradientNoise::Additive { sigma: 0.3 },
        quantizer: Some(QuantizerConfig::new(2, NormKind::Infinity, 16).unwrap()),
        rounds: 300,
        seeds: vec![3, 4],
        record_lyapunov: true,
        ..Default::default()
    };
    let a = leadopt::simulator::run(&cfg, &Executor::with_threads(0).unwrap()).unwrap();
    let b = leadopt::simulator::run(&cfg, &Executor::with_threads(4).unwrap()).unwrap();
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.csv_string() == y.csv_string());
    report(10, same, format!("{} CSVs compared byte for byte at 0 and 4 threads", a.len()));
}
