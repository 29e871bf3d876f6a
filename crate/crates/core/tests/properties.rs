use leadopt::algorithms::{lead_init, lead_step, LeadContext, LeadParams};
use leadopt::compression::{
    decode, quantize, Compressor, NormKind, QuantizedMessage, QuantizerConfig, SeqDither,
};
use leadopt::exec::Executor;
use leadopt::problems::{gen_linreg, gen_logreg, GradientNoise, LinRegSpec, LogRegSpec, Problem};
use leadopt::rng::Streams;
use leadopt::simulator::{ExperimentConfig, InitSpec, ParamMode};
use leadopt::topology::MixingMatrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Metropolis weights on a random connected graph: a random spanning tree
/// plus extra edges.
fn metropolis(n: usize, extra: &[(usize, usize)], seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut adj = vec![vec![false; n]; n];
    for i in 1..n {
        let j = rng.random_range(0..i);
        adj[i][j] = true;
        adj[j][i] = true;
    }
    for &(a, b) in extra {
        let (a, b) = (a % n, b % n);
        if a != b {
            adj[a][b] = true;
            adj[b][a] = true;
        }
    }
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|v| **v).count()).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if adj[i][j] {
                w[(i, j)] = 1.0 / (1 + deg[i].max(deg[j])) as f64;
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|j| *j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudoinverse_identities(n in 2usize..12, extra in prop::collection::vec((0usize..12, 0usize..12), 0..20), seed in any::<u64>()) {
        let m = MixingMatrix::new(metropolis(n, &extra, seed)).unwrap();
        let iw = DMatrix::<f64>::identity(n, n) - m.w();
        let p = m.pinv_iw();
        prop_assert!((&iw * p * &iw - &iw).norm() <= 1e-9);
        prop_assert!((p * &iw * p - p).norm() <= 1e-9 * p.norm().max(1.0));
        let ones = DVector::from_element(n, 1.0);
        prop_assert!((&iw * &ones).norm() <= 1e-12);
        prop_assert!((p * &ones).norm() <= 1e-9 * p.norm().max(1.0));
        prop_assert!(m.beta() > 0.0 && m.beta() < 2.0);
        prop_assert!(m.lambda_min_plus() > 0.0 && m.lambda_min_plus() <= m.beta() + 1e-12);
        prop_assert!((m.kappa_g() - m.beta() / m.lambda_min_plus()).abs() <= 1e-9 * m.kappa_g());
    }

    #[test]
    fn range_projection_of_laplacian_image(n in 3usize..10, seed in any::<u64>(), d in 1usize..5) {
        let m = MixingMatrix::new(metropolis(n, &[], seed)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 1);
        let z = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() - 0.5);
        let d_mat = m.laplacian(&z);
        let back = m.pinv_iw() * m.laplacian(&d_mat);
        prop_assert!((back - &d_mat).norm() <= 1e-8 * d_mat.norm().max(1e-12));
        prop_assert!(d_mat.row_sum().norm() <= 1e-12 * z.norm().max(1.0));
    }

    #[test]
    fn grid_points_are_exact(bits in 1u32..9, levels in prop::collection::vec(-255i32..=255, 1..40), scale in 0.01f64..100.0) {
        let top = (1u32 << (bits - 1)) as i32;
        let mut x: Vec<f64> = levels.iter().map(|l| (l % (top + 1)) as f64).collect();
        x[0] = top as f64;
        let x: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let cfg = QuantizerConfig::new(bits, NormKind::Infinity, 64).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let q = decode(&quantize(&x, &cfg, &mut SeqDither(&mut rng)).unwrap()).unwrap();
        // the transmitted scale is rounded up to f32, so compare loosely
        for (a, b) in x.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-6 * scale * top as f64, "{a} vs {b}");
        }
    }

    #[test]
    fn wire_round_trip(bits in 1u32..=16, block in 1usize..70, len in 0usize..200, p in prop_oneof![Just(NormKind::Infinity), Just(NormKind::P(1.0)), Just(NormKind::P(2.0)), Just(NormKind::P(3.5))], seed in any::<u64>()) {
        let cfg = QuantizerConfig::new(bits, p, block).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| (rng.random::<f64>() - 0.5) * 10.0).collect();
        let msg = quantize(&x, &cfg, &mut SeqDither(&mut rng)).unwrap();
        let bytes = msg.to_bytes();
        // length header, then each block byte-aligned
        let framed: u64 = 4 + msg.blocks.iter().map(|b| 4 + (b.levels.len() as u64 * (1 + bits as u64)).div_ceil(8)).sum::<u64>();
        prop_assert_eq!(bytes.len() as u64, framed);
        let back = QuantizedMessage::from_bytes(&bytes, &cfg).unwrap();
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(decode(&back).unwrap(), decode(&msg).unwrap());
        prop_assert_eq!(msg.bits(), cfg.payload_bits(len));
    }

    #[test]
    fn corrupt_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..300), bits in 1u32..=8) {
        let cfg = QuantizerConfig::new(bits, NormKind::Infinity, 16).unwrap();
        if let Ok(msg) = QuantizedMessage::from_bytes(&bytes, &cfg) {
            prop_assert!(decode(&msg).is_ok());
        }
    }

    #[test]
    fn config_dump_round_trips(rounds in 1u64..10_000, seeds in prop::collection::vec(any::<u64>(), 1..4), eta in 1e-6f64..1.0, scale in 0.0f64..5.0, bits in 1u32..=16) {
        let cfg = ExperimentConfig {
            rounds,
            seeds,
            params: ParamMode::Manual { eta, gamma: 1.0, alpha: 0.5 },
            init: InitSpec::Random { scale },
            quantizer: Some(QuantizerConfig::new(bits, NormKind::P(2.0), 512).unwrap()),
            ..Default::default()
        };
        let text = cfg.to_json_pretty();
        prop_assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dual_stays_in_range(seed in any::<u64>(), bits in 1u32..5, eta_scale in 0.1f64..0.5, alpha in 0.05f64..1.0) {
        let p = gen_linreg(&LinRegSpec { n: 6, d: 12, rows_per_agent: 24, ..Default::default() }).unwrap();
        let w = MixingMatrix::ring(6, 0.4).unwrap();
        let comp = Compressor::Quantized(QuantizerConfig::new(bits, NormKind::Infinity, 8).unwrap());
        let noise = GradientNoise::Additive { sigma: 0.2 };
        let exec = Executor::sequential();
        let ctx = LeadContext { problem: &p, mixing: &w, compressor: &comp, noise: &noise, streams: Streams::new(seed), exec: &exec };
        let prm = LeadParams::new(eta_scale / p.lipschitz(), 1.0, alpha).unwrap();
        let mut s = lead_init(&ctx, &prm, &DMatrix::zeros(6, 12), None).unwrap();
        for _ in 0..60 {
            lead_step(&mut s, &ctx, &prm).unwrap();
            let dn = s.d_dual.norm();
            let back = w.pinv_iw() * w.laplacian(&s.d_dual);
            prop_assert!((back - &s.d_dual).norm() <= 1e-8 * dn.max(1e-300));
            prop_assert!(s.d_dual.row_sum().norm() <= 1e-9 * dn.max(1.0));
        }
    }
}

fn sandwich(p: &Problem, pairs: usize, seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = p.d();
    for _ in 0..pairs {
        let x = DVector::from_fn(d, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
        let y = DVector::from_fn(d, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
        let dist = (&x - &y).norm_squared();
        for f in p.locals() {
            let gap = f.value(&x) - f.value(&y) - f.gradient(&y).dot(&(&x - &y));
            let tol = 1e-9 * (f.value(&x).abs() + f.value(&y).abs()).max(1.0);
            assert!(gap >= 0.5 * p.mu() * dist - tol, "{gap} < mu/2 |x-y|^2");
            assert!(gap <= 0.5 * p.lipschitz() * dist + tol, "{gap} > L/2 |x-y|^2");
        }
    }
}

#[test]
fn strong_convexity_and_smoothness_sandwich() {
    let lin = gen_linreg(&LinRegSpec { n: 4, d: 10, rows_per_agent: 30, ..Default::default() }).unwrap();
    sandwich(&lin, 1000, 1);
    let log = gen_logreg(&LogRegSpec { n: 4, d: 6, samples_per_agent: 40, lambda: 0.01, ..Default::default() }).unwrap();
    sandwich(&log, 1000, 2);
}

#[test]
fn additive_noise_is_unbiased_with_configured_variance() {
    let p = gen_linreg(&LinRegSpec { n: 2, d: 8, rows_per_agent: 16, ..Default::default() }).unwrap();
    let x = DMatrix::from_fn(2, 8, |i, j| (i + j) as f64 * 0.1);
    let exact = p.gradient(&x).unwrap().value;
    let sigma = 0.1;
    let noise = GradientNoise::Additive { sigma };
    let streams = Streams::new(5);
    let exec = Executor::sequential();
    let draws = 100_000u64;
    let mut sum = DMatrix::zeros(2, 8);
    let mut sq = 0.0;
    for r in 0..draws {
        let g = p.stochastic_gradient(&x, &noise, &streams, r, &exec).unwrap().value;
        let e = &g - &exact;
        sq += e.norm_squared() / 2.0;
        sum += e;
    }
    let n = draws as f64;
    let se = sigma / (8f64).sqrt() / n.sqrt();
    for v in sum.iter() {
        assert!((v / n).abs() <= 5.0 * se);
    }
    let var = sq / n;
    assert!((var - sigma * sigma).abs() <= 0.02 * sigma * sigma, "{var}");
}
