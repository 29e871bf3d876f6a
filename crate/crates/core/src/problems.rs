//! Local objectives, gradient oracles and reference optima.
//!
//! A [`Problem`] holds `n` local objectives `f_i` on `R^d`. The global
//! objective is their average. Construction computes the curvature
//! constants `mu` (min over agents) and `L` (max over agents) and a
//! reference optimum `x*` solved to gradient norm `≤ 1e−10`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::rng::{Purpose, Streams};
use crate::{Error, Result};

/// Stopping tolerance of the reference solver on `‖∇f(x)‖`.
pub const REFERENCE_GRAD_TOL: f64 = 1e-10;

/// `f(x) = ½ xᵀ H x − cᵀ x + k`, optionally backed by data rows so that
/// minibatch gradients are available.
#[derive(Debug, Clone)]
pub struct QuadraticLocal {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
    rows: Option<RidgeRows>,
}

/// `‖A x − b‖² + λ‖x‖²` in row form.
#[derive(Debug, Clone)]
struct RidgeRows {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lambda: f64,
}

impl QuadraticLocal {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        let d = hessian.nrows();
        if hessian.ncols() != d || linear.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "hessian {}x{} and linear term of length {}",
                hessian.nrows(),
                hessian.ncols(),
                linear.len()
            )));
        }
        Ok(Self { hessian, linear, constant, rows: None })
    }

    /// `‖A x − b‖² + λ‖x‖²`.
    pub fn ridge(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        let d = a.ncols();
        let at = a.transpose();
        let hessian = (&at * &a + DMatrix::<f64>::identity(d, d) * lambda) * 2.0;
        let linear = (&at * &b) * 2.0;
        let constant = b.dot(&b);
        Ok(Self { hessian, linear, constant, rows: Some(RidgeRows { a, b, lambda }) })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }
}

/// Mean logistic loss with labels in `{0, 1}` plus `(λ/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct LogisticLocal {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    lambda: f64,
}

impl LogisticLocal {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, lambda: f64) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::Dataset("an agent holds no samples".into()));
        }
        Ok(Self { features, labels, lambda })
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

/// One agent's objective.
#[derive(Debug, Clone)]
pub enum LocalObjective {
    Quadratic(QuadraticLocal),
    Logistic(LogisticLocal),
}

impl LocalObjective {
    pub fn dim(&self) -> usize {
        match self {
            LocalObjective::Quadratic(q) => q.linear.len(),
            LocalObjective::Logistic(l) => l.features.ncols(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            LocalObjective::Quadratic(q) => 0.5 * x.dot(&(&q.hessian * x)) - q.linear.dot(x) + q.constant,
            LocalObjective::Logistic(l) => {
                let t = &l.features * x;
                let loss: f64 = t.iter().zip(l.labels.iter()).map(|(t, y)| softplus(*t) - y * t).sum();
                loss / l.labels.len() as f64 + 0.5 * l.lambda * x.norm_squared()
            }
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LocalObjective::Quadratic(q) => &q.hessian * x - &q.linear,
            LocalObjective::Logistic(l) => {
                let t = &l.features * x;
                let r = DVector::from_iterator(
                    t.len(),
                    t.iter().zip(l.labels.iter()).map(|(t, y)| sigmoid(*t) - y),
                );
                l.features.tr_mul(&r) / l.labels.len() as f64 + x * l.lambda
            }
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            LocalObjective::Quadratic(q) => q.hessian.clone(),
            LocalObjective::Logistic(l) => {
                let d = l.features.ncols();
                let t = &l.features * x;
                let mut weighted = l.features.clone();
                for (i, t) in t.iter().enumerate() {
                    let s = sigmoid(*t);
                    weighted.row_mut(i).scale_mut(s * (1.0 - s));
                }
                l.features.tr_mul(&weighted) / l.labels.len() as f64
                    + DMatrix::<f64>::identity(d, d) * l.lambda
            }
        }
    }

    /// `(μ_i, L_i)`: exact Hessian eigenvalues for quadratics; for logistic
    /// loss `μ_i = λ` and `L_i = λ + λ_max(ZᵀZ)/(4m)`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        match self {
            LocalObjective::Quadratic(q) => {
                let eig = SymmetricEigen::new(q.hessian.clone()).eigenvalues;
                (eig.min(), eig.max())
            }
            LocalObjective::Logistic(l) => {
                let gram = l.features.tr_mul(&l.features);
                let top = if gram.nrows() == 0 { 0.0 } else { lambda_max(&gram) };
                (l.lambda, l.lambda + top / (4.0 * l.labels.len() as f64))
            }
        }
    }

    /// Number of data rows available for minibatching, if any.
    pub fn sample_count(&self) -> Option<usize> {
        match self {
            LocalObjective::Quadratic(q) => q.rows.as_ref().map(|r| r.a.nrows()),
            LocalObjective::Logistic(l) => Some(l.labels.len()),
        }
    }

    /// Unbiased gradient estimate from the listed rows.
    fn minibatch_gradient(&self, x: &DVector<f64>, rows: &[usize]) -> Result<DVector<f64>> {
        let batch = rows.len() as f64;
        match self {
            LocalObjective::Quadratic(q) => {
                let r = q.rows.as_ref().ok_or_else(|| {
                    Error::Parameter("minibatch gradients need a data-backed objective".into())
                })?;
                let m = r.a.nrows() as f64;
                let mut g = x * (2.0 * r.lambda);
                for &k in rows {
                    let a = r.a.row(k);
                    let resid = (a * x)[0] - r.b[k];
                    g += a.transpose() * (2.0 * resid * m / batch);
                }
                Ok(g)
            }
            LocalObjective::Logistic(l) => {
                let mut g = x * l.lambda;
                for &k in rows {
                    let z = l.features.row(k);
                    let resid = sigmoid((z * x)[0]) - l.labels[k];
                    g += z.transpose() * (resid / batch);
                }
                Ok(g)
            }
        }
    }
}

/// How gradient samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientNoise {
    #[default]
    Exact,
    /// Exact gradient plus Gaussian noise with `E‖ξ‖² = sigma²` per agent
    /// (per-coordinate standard deviation `sigma/√d`).
    Additive { sigma: f64 },
    /// Uniform minibatch without replacement; clamped to the local data size.
    Minibatch { size: usize },
}

impl GradientNoise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GradientNoise::Additive { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Parameter(format!("sigma must be finite and >= 0, got {sigma}")))
            }
            GradientNoise::Minibatch { size: 0 } => {
                Err(Error::Parameter("minibatch size must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Configured `σ² = (1/n)Σσ_i²`, when known in closed form.
    pub fn sigma_sq(&self) -> Option<f64> {
        match *self {
            GradientNoise::Exact => Some(0.0),
            GradientNoise::Additive { sigma } => Some(sigma * sigma),
            GradientNoise::Minibatch { .. } => None,
        }
    }
}

/// `∇F(X; ξ)`: row `i` is agent `i`'s sampled gradient at its own iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: DMatrix<f64>,
    pub sigma_sq: Option<f64>,
}

/// `n` local objectives with constants and reference optimum.
#[derive(Debug, Clone)]
pub struct Problem {
    locals: Vec<LocalObjective>,
    d: usize,
    mu: f64,
    lipschitz: f64,
    x_star: DVector<f64>,
    f_star: f64,
}

impl Problem {
    /// Computes constants and solves for the reference optimum.
    pub fn new(locals: Vec<LocalObjective>) -> Result<Self> {
        let first = locals
            .first()
            .ok_or_else(|| Error::Parameter("a problem needs at least one agent".into()))?;
        let d = first.dim();
        if let Some((i, l)) = locals.iter().enumerate().find(|(_, l)| l.dim() != d) {
            return Err(Error::DimensionMismatch(format!(
                "agent {i} has dimension {}, agent 0 has {d}",
                l.dim()
            )));
        }
        let (mu, lipschitz) = locals.iter().map(LocalObjective::curvature_bounds).fold(
            (f64::INFINITY, 0.0_f64),
            |(mu, l), (mi, li)| (mu.min(mi), l.max(li)),
        );
        if !(mu > 0.0) || mu > lipschitz * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!(
                "objectives must be strongly convex with 0 < mu <= L, got mu = {mu}, L = {lipschitz}"
            )));
        }
        let mut problem = Self {
            locals,
            d,
            mu,
            lipschitz: lipschitz.max(mu),
            x_star: DVector::zeros(d),
            f_star: 0.0,
        };
        problem.x_star = problem.solve_reference()?;
        problem.f_star = problem.value(&problem.x_star);
        Ok(problem)
    }

    /// Damped Newton on the average objective.
    fn solve_reference(&self) -> Result<DVector<f64>> {
        let d = self.d;
        let mut x = DVector::zeros(d);
        if d == 0 {
            return Ok(x);
        }
        for _ in 0..200 {
            let g = self.full_gradient(&x);
            if g.norm() <= REFERENCE_GRAD_TOL * x.norm().max(1.0) {
                return Ok(x);
            }
            let mut h = DMatrix::zeros(d, d);
            for l in &self.locals {
                h += l.hessian(&x);
            }
            h /= self.n() as f64;
            let step = h
                .cholesky()
                .ok_or_else(|| Error::Numeric("reference Hessian is not positive definite".into()))?
                .solve(&g);
            let f0 = self.value(&x);
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                let cand = &x - &step * t;
                if self.value(&cand) <= f0 - 1e-4 * t * slope || t < 1e-12 {
                    x = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        let g = self.full_gradient(&x);
        if g.norm() <= REFERENCE_GRAD_TOL * x.norm().max(1.0) {
            Ok(x)
        } else {
            Err(Error::Numeric(format!(
                "reference solver stopped at gradient norm {:e}",
                g.norm()
            )))
        }
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `κ_f = L/μ`.
    pub fn kappa_f(&self) -> f64 {
        self.lipschitz / self.mu
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn locals(&self) -> &[LocalObjective] {
        &self.locals
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.locals.iter().map(|l| l.value(x)).sum::<f64>() / self.n() as f64
    }

    /// `∇f(x) = (1/n) Σ ∇f_i(x)`.
    pub fn full_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        for l in &self.locals {
            g += l.gradient(x);
        }
        g / self.n() as f64
    }

    /// `X* = 1 x*ᵀ`.
    pub fn optimum_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.d, |_, j| self.x_star[j])
    }

    /// `D* = −∇F(X*)` from exact gradients.
    pub fn optimal_dual(&self) -> DMatrix<f64> {
        let x = self.optimum_matrix();
        -self.exact_rows(&x)
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n() || x.ncols() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "iterate is {}x{}, problem is {}x{}",
                x.nrows(),
                x.ncols(),
                self.n(),
                self.d
            )));
        }
        Ok(())
    }

    fn exact_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), self.d);
        for (i, l) in self.locals.iter().enumerate() {
            let xi = x.row(i).transpose();
            out.set_row(i, &l.gradient(&xi).transpose());
        }
        out
    }

    /// Exact `∇F(X)`.
    pub fn gradient(&self, x: &DMatrix<f64>) -> Result<GradientSample> {
        self.check_shape(x)?;
        Ok(GradientSample { value: self.exact_rows(x), sigma_sq: Some(0.0) })
    }

    /// Agent `i`'s gradient sample at `x_i` for `round`, drawn from the
    /// stream `(Gradient, round, i)`.
    pub fn sample_row(
        &self,
        i: usize,
        x_i: &DVector<f64>,
        noise: &GradientNoise,
        streams: &Streams,
        round: u64,
    ) -> Result<DVector<f64>> {
        let local = self
            .locals
            .get(i)
            .ok_or_else(|| Error::DimensionMismatch(format!("no agent {i}")))?;
        if x_i.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "iterate has length {}, problem dimension is {}",
                x_i.len(),
                self.d
            )));
        }
        match *noise {
            GradientNoise::Exact => Ok(local.gradient(x_i)),
            GradientNoise::Additive { sigma } => {
                let mut g = local.gradient(x_i);
                if sigma > 0.0 && self.d > 0 {
                    let std = sigma / (self.d as f64).sqrt();
                    let mut rng = streams.stream(Purpose::Gradient, round, i as u64, 0);
                    for v in g.iter_mut() {
                        *v += std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                Ok(g)
            }
            GradientNoise::Minibatch { size } => {
                let m = local.sample_count().ok_or_else(|| {
                    Error::Parameter("minibatch gradients need a data-backed objective".into())
                })?;
                if size >= m {
                    return Ok(local.gradient(x_i));
                }
                let mut rng = streams.stream(Purpose::Gradient, round, i as u64, 0);
                let mut rows = rand::seq::index::sample(&mut rng, m, size).into_vec();
                rows.sort_unstable();
                local.minibatch_gradient(x_i, &rows)
            }
        }
    }

    /// `∇F(X; ξ)` for `round`, one independent stream per agent.
    pub fn stochastic_gradient(
        &self,
        x: &DMatrix<f64>,
        noise: &GradientNoise,
        streams: &Streams,
        round: u64,
        exec: &Executor,
    ) -> Result<GradientSample> {
        self.check_shape(x)?;
        noise.validate()?;
        let rows = exec.map(self.n(), |i| {
            self.sample_row(i, &x.row(i).transpose(), noise, streams, round)
        });
        let mut value = DMatrix::zeros(self.n(), self.d);
        for (i, row) in rows.into_iter().enumerate() {
            value.set_row(i, &row?.transpose());
        }
        Ok(GradientSample { value, sigma_sq: noise.sigma_sq() })
    }
}

/// Synthetic ridge regression: `f_i(x) = ‖A_i x − b_i‖² + λ‖x‖²` with
/// `b_i = A_i x' + noise`, entries of `A_i` drawn `N(0, 1/rows)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinRegSpec {
    pub n: usize,
    pub d: usize,
    pub rows_per_agent: usize,
    pub lambda: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for LinRegSpec {
    fn default() -> Self {
        Self { n: 8, d: 200, rows_per_agent: 200, lambda: 0.1, noise: 0.1, seed: 0 }
    }
}

pub fn gen_linreg(spec: &LinRegSpec) -> Result<Problem> {
    if spec.n == 0 || spec.d == 0 || spec.rows_per_agent == 0 {
        return Err(Error::Parameter("n, d and rows_per_agent must all be at least 1".into()));
    }
    if !(spec.lambda >= 0.0) || !(spec.noise >= 0.0) {
        return Err(Error::Parameter("lambda and noise must be non-negative".into()));
    }
    let streams = Streams::new(spec.seed);
    let mut rng = streams.stream(Purpose::Data, 0, 0, 0);
    let truth = DVector::from_fn(spec.d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale = 1.0 / (spec.rows_per_agent as f64).sqrt();
    let locals = (0..spec.n)
        .map(|i| {
            let mut rng = streams.stream(Purpose::Data, 1, i as u64, 0);
            let a = DMatrix::from_fn(spec.rows_per_agent, spec.d, |_, _| {
                scale * rng.sample::<f64, _>(StandardNormal)
            });
            let clean = &a * &truth;
            let b = DVector::from_fn(spec.rows_per_agent, |r, _| {
                clean[r] + spec.noise * rng.sample::<f64, _>(StandardNormal)
            });
            QuadraticLocal::ridge(a, b, spec.lambda).map(LocalObjective::Quadratic)
        })
        .collect::<Result<Vec<_>>>()?;
    Problem::new(locals)
}

/// Labelled feature matrix for logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One sample per row.
    pub features: DMatrix<f64>,
    /// Labels in `{0, 1}`.
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Two Gaussian clouds with means `±separation/2 · u` along a random unit
    /// direction `u`, balanced labels.
    pub fn two_class(samples: usize, d: usize, separation: f64, seed: u64) -> Self {
        let mut rng = Streams::new(seed).stream(Purpose::Data, 2, 0, 0);
        let mut dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            dir /= norm;
        }
        let labels: Vec<f64> = (0..samples).map(|k| (k % 2) as f64).collect();
        let features = DMatrix::from_fn(samples, d, |r, c| {
            let sign = if labels[r] == 1.0 { 0.5 } else { -0.5 };
            sign * separation * dir[c] + rng.sample::<f64, _>(StandardNormal)
        });
        Self { features, labels }
    }

    /// Parses CSV with a header row. Features are standardized column-wise
    /// to zero mean and unit variance; constant columns become zero.
    pub fn from_csv_str(text: &str, label_column: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Dataset(format!("cannot read header: {e}")))?
            .clone();
        let label_idx = header.iter().position(|h| h == label_column).ok_or_else(|| {
            Error::Dataset(format!("label column {label_column:?} not found in header"))
        })?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Dataset(format!("line {}: {e}", line + 2)))?;
            let mut feats = Vec::with_capacity(record.len().saturating_sub(1));
            for (col, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Dataset(format!(
                        "line {}, column {:?}: non-numeric cell {cell:?}",
                        line + 2,
                        header.get(col).unwrap_or("?")
                    ))
                })?;
                if col == label_idx {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Dataset(format!(
                            "line {}: label {v} is not 0 or 1",
                            line + 2
                        )));
                    }
                    labels.push(v);
                } else {
                    feats.push(v);
                }
            }
            rows.push(feats);
        }
        let d = header.len() - 1;
        let mut features = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
        standardize(&mut features);
        Ok(Self { features, labels })
    }

    pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?, label_column)
    }

    /// CSV with header `x0,…,x{d−1},<label_column>` at full precision.
    pub fn to_csv_string(&self, label_column: &str) -> String {
        let mut out: Vec<String> = (0..self.dim()).map(|c| format!("x{c}")).collect();
        out.push(label_column.to_string());
        let mut text = out.join(",");
        text.push('\n');
        for (r, y) in self.labels.iter().enumerate() {
            let mut cells: Vec<String> = self.features.row(r).iter().map(|v| format!("{v:e}")).collect();
            cells.push(format!("{y}"));
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        text
    }
}

fn standardize(m: &mut DMatrix<f64>) {
    let rows = m.nrows() as f64;
    if rows == 0.0 {
        return;
    }
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / rows;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows;
        let std = var.sqrt();
        for v in col.iter_mut() {
            *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
        }
    }
}

/// How samples are assigned to agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Shuffle, then split contiguously.
    Homogeneous,
    /// Sort by label, then split contiguously.
    #[default]
    Heterogeneous,
}

/// Splits `dataset` over `n` agents and builds the logistic problem.
pub fn logreg_from_dataset(
    dataset: &Dataset,
    n: usize,
    lambda: f64,
    partition: Partition,
    seed: u64,
) -> Result<Problem> {
    if n == 0 || dataset.len() < n {
        return Err(Error::Dataset(format!(
            "{} samples cannot be split over {n} agents",
            dataset.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    match partition {
        Partition::Heterogeneous => order.sort_by(|a, b| dataset.labels[*a].total_cmp(&dataset.labels[*b])),
        Partition::Homogeneous => {
            let mut rng = Streams::new(seed).stream(Purpose::Data, 3, 0, 0);
            order.shuffle(&mut rng);
        }
    }
    let base = dataset.len() / n;
    let extra = dataset.len() % n;
    let mut start = 0;
    let locals = (0..n)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let idx = &order[start..start + len];
            start += len;
            let features = DMatrix::from_fn(len, dataset.dim(), |r, c| dataset.features[(idx[r], c)]);
            let labels = DVector::from_iterator(len, idx.iter().map(|k| dataset.labels[*k]));
            LogisticLocal::new(features, labels, lambda).map(LocalObjective::Logistic)
        })
        .collect::<Result<Vec<_>>>()?;
    Problem::new(locals)
}

/// Synthetic two-class logistic regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegSpec {
    pub n: usize,
    pub d: usize,
    pub samples_per_agent: usize,
    pub lambda: f64,
    pub partition: Partition,
    /// Distance between the two class means.
    pub separation: f64,
    pub seed: u64,
}

impl Default for LogRegSpec {
    fn default() -> Self {
        Self {
            n: 8,
            d: 20,
            samples_per_agent: 100,
            lambda: 1e-4,
            partition: Partition::Heterogeneous,
            separation: 2.0,
            seed: 0,
        }
    }
}

pub fn gen_logreg(spec: &LogRegSpec) -> Result<Problem> {
    if spec.samples_per_agent == 0 {
        return Err(Error::Parameter("samples_per_agent must be at least 1".into()));
    }
    let data = Dataset::two_class(spec.n * spec.samples_per_agent, spec.d, spec.separation, spec.seed);
    logreg_from_dataset(&data, spec.n, spec.lambda, spec.partition, spec.seed)
}
