//! Step-size admissibility, rate certificates, the diminishing schedule and
//! the Lyapunov function used to check contraction.

use nalgebra::DMatrix;
use serde::Serialize;

use super::SwarmState;
use crate::problems::Problem;
use crate::topology::MixingMatrix;
use crate::{Error, Result};

/// Relative slack when testing closed interval endpoints computed by the
/// same formulas.
const ENDPOINT_TOL: f64 = 1e-12;

/// Constant step sizes `(η, γ, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeadParams {
    pub eta: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl LeadParams {
    pub fn new(eta: f64, gamma: f64, alpha: f64) -> Result<Self> {
        let p = Self { eta, gamma, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Parameter(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Problem, network and compressor constants that enter the rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub mu: f64,
    pub lipschitz: f64,
    /// Compression constant `C ≥ 0`.
    pub c: f64,
    /// `λ_max(I − W)`.
    pub beta: f64,
    /// `λ_max((I − W)†)`.
    pub lambda_max_pinv: f64,
}

impl ProblemConstants {
    pub fn from_parts(problem: &Problem, mixing: &MixingMatrix, c: f64) -> Self {
        Self {
            mu: problem.mu(),
            lipschitz: problem.lipschitz(),
            c,
            beta: mixing.beta(),
            lambda_max_pinv: mixing.lambda_max_pinv(),
        }
    }

    /// Builds from `κ_g = β·λ_max((I − W)†)` instead of the pseudoinverse bound.
    pub fn with_kappa_g(mu: f64, lipschitz: f64, c: f64, beta: f64, kappa_g: f64) -> Self {
        Self { mu, lipschitz, c, beta, lambda_max_pinv: kappa_g / beta }
    }

    pub fn kappa_f(&self) -> f64 {
        self.lipschitz / self.mu
    }

    pub fn kappa_g(&self) -> f64 {
        self.beta * self.lambda_max_pinv
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(self.mu > 0.0 && ok(self.mu) && self.lipschitz >= self.mu && ok(self.lipschitz)) {
            return Err(Error::Parameter(format!(
                "need 0 < mu <= L, got mu = {}, L = {}",
                self.mu, self.lipschitz
            )));
        }
        if !(self.c >= 0.0 && ok(self.c)) {
            return Err(Error::Parameter(format!("C must be finite and >= 0, got {}", self.c)));
        }
        if !(self.beta > 0.0 && self.beta < 2.0) {
            return Err(Error::Parameter(format!("beta must lie in (0, 2), got {}", self.beta)));
        }
        if !(self.lambda_max_pinv > 0.0 && ok(self.lambda_max_pinv)) {
            return Err(Error::Parameter(format!(
                "lambda_max of the pseudoinverse must be positive, got {}",
                self.lambda_max_pinv
            )));
        }
        Ok(())
    }
}

/// `a₁ = 4(1+C)/(Cβγ+2)`. Without compression the state `H` plays no role,
/// so its weight is dropped (`a₁ = 0`).
pub fn a1(c: f64, beta: f64, gamma: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        4.0 * (1.0 + c) / (c * beta * gamma + 2.0)
    }
}

/// Which term attains the maximum in `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoTerm {
    /// `(1 − μη(2−μη))/(1 − a₁α)`
    Primal,
    /// `1 − γ/(2λ_max((I−W)†))`
    Dual,
    /// `1 − α`
    State,
}

/// Admissible ranges and the contraction factor for a candidate `(γ, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCertificate {
    pub eta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub a1: f64,
    pub rho: f64,
    pub rho_terms: [f64; 3],
    pub binding: RhoTerm,
    /// Open interval; the upper end is `+∞` (serialized as `null`) when `C = 0`.
    pub gamma_range: (f64, f64),
    /// Closed interval at this `γ`.
    pub alpha_range: (f64, f64),
    pub gamma_admissible: bool,
    pub alpha_admissible: bool,
}

impl RateCertificate {
    pub fn admissible(&self) -> bool {
        self.gamma_admissible && self.alpha_admissible && self.rho < 1.0
    }
}

/// Constant-step admissibility at a fixed `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantStep {
    pub consts: ProblemConstants,
    pub eta: f64,
    /// `μη(2 − μη)`.
    pub m: f64,
    pub gamma_upper: f64,
}

impl ConstantStep {
    /// Requires `0 < η ≤ 2/(μ+L)`.
    pub fn new(consts: ProblemConstants, eta: f64) -> Result<Self> {
        consts.validate()?;
        let limit = 2.0 / (consts.mu + consts.lipschitz);
        if !(eta > 0.0) || eta > limit * (1.0 + ENDPOINT_TOL) {
            return Err(Error::Parameter(format!(
                "eta = {eta} violates 0 < eta <= 2/(mu+L) = {limit}"
            )));
        }
        let m = consts.mu * eta * (2.0 - consts.mu * eta);
        let c = consts.c;
        let g1 = 2.0 / ((3.0 * c + 1.0) * consts.beta);
        let g2 = if c == 0.0 { f64::INFINITY } else { 2.0 * m / ((2.0 - m) * c * consts.beta) };
        Ok(Self { consts, eta, m, gamma_upper: g1.min(g2) })
    }

    /// `[Cβγ/(2(1+C)), (1/a₁)·min{(2−βγ)/(4−βγ), μη(2−μη)}]`, or `[0, 1]`
    /// when `C = 0`.
    pub fn alpha_range(&self, gamma: f64) -> (f64, f64) {
        let (c, beta) = (self.consts.c, self.consts.beta);
        if c == 0.0 {
            return (0.0, 1.0);
        }
        let bg = beta * gamma;
        let lo = c * bg / (2.0 * (1.0 + c));
        let hi = ((2.0 - bg) / (4.0 - bg)).min(self.m) / a1(c, beta, gamma);
        (lo, hi)
    }

    pub fn certify(&self, gamma: f64, alpha: f64) -> RateCertificate {
        let (c, beta) = (self.consts.c, self.consts.beta);
        let a = a1(c, beta, gamma);
        let denom = 1.0 - a * alpha;
        let primal = if denom > 0.0 { (1.0 - self.m) / denom } else { f64::INFINITY };
        let dual = 1.0 - gamma / (2.0 * self.consts.lambda_max_pinv);
        let state = if c == 0.0 { 0.0 } else { 1.0 - alpha };
        let terms = [primal, dual, state];
        let (binding, rho) = [RhoTerm::Primal, RhoTerm::Dual, RhoTerm::State]
            .into_iter()
            .zip(terms)
            .fold((RhoTerm::Primal, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let (lo, hi) = self.alpha_range(gamma);
        let slack = ENDPOINT_TOL * hi.abs().max(lo.abs());
        RateCertificate {
            eta: self.eta,
            gamma,
            alpha,
            a1: a,
            rho,
            rho_terms: terms,
            binding,
            gamma_range: (0.0, self.gamma_upper),
            alpha_range: (lo, hi),
            gamma_admissible: gamma > 0.0 && gamma < self.gamma_upper,
            alpha_admissible: lo <= hi && alpha >= lo - slack && alpha <= hi + slack && alpha > 0.0,
        }
    }
}

/// Which branch of the concrete `(γ, α)` choice applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcreteCase {
    /// `γ = 1/(Cβκ_f)` binds; `α` at the lower end of its range.
    ObjectiveBound,
    /// `γ = 1/((1+3C)β)` binds.
    GraphBound,
    /// `C = 0`: `γ = 1/β`, `α = 1`.
    Uncompressed,
}

/// Concrete constant parameters with their exact rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcreteParams {
    pub params: LeadParams,
    pub case: ConcreteCase,
    pub rho_bound: f64,
    pub certificate: RateCertificate,
}

/// `η = 1/L`, `γ = min{1/(Cβκ_f), 1/((1+3C)β)}` and `α` from the branch
/// that fixed `γ`.
pub fn concrete_params(consts: &ProblemConstants) -> Result<ConcreteParams> {
    consts.validate()?;
    let (c, beta, kf) = (consts.c, consts.beta, consts.kappa_f());
    let eta = 1.0 / consts.lipschitz;
    let (gamma, alpha, case) = if c == 0.0 {
        (1.0 / beta, 1.0, ConcreteCase::Uncompressed)
    } else {
        let g_obj = 1.0 / (c * beta * kf);
        let g_graph = 1.0 / ((1.0 + 3.0 * c) * beta);
        if g_obj < g_graph {
            (g_obj, c * beta * g_obj / (2.0 * (1.0 + c)), ConcreteCase::ObjectiveBound)
        } else {
            let alpha = ((6.0 * c + 1.0) / (12.0 * c + 3.0)).min(1.0 / kf) * (7.0 * c + 2.0)
                / (4.0 * (c + 1.0) * (3.0 * c + 1.0));
            (g_graph, alpha, ConcreteCase::GraphBound)
        }
    };
    let certificate = ConstantStep::new(*consts, eta)?.certify(gamma, alpha);
    Ok(ConcreteParams {
        params: LeadParams::new(eta, gamma, alpha)?,
        case,
        rho_bound: certificate.rho,
        certificate,
    })
}

/// Constants of the diminishing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thetas {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub eta_star: f64,
    pub theta5: f64,
}

/// `η_k = 2θ₅/(θ₃θ₄θ₅k + 2)`, `γ_k = θ₄η_k`, `α_k = Cβγ_k/(2(1+C))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub consts: ProblemConstants,
    pub thetas: Thetas,
}

impl Schedule {
    /// `θ₄` must lie in `(0, μ/(Cβ))`; undefined for `C = 0`.
    pub fn new(consts: ProblemConstants, theta4: f64) -> Result<Self> {
        consts.validate()?;
        let ProblemConstants { mu, lipschitz, c, beta, lambda_max_pinv } = consts;
        if c == 0.0 {
            return Err(Error::ScheduleUndefined(
                "the diminishing schedule needs C > 0; use constant step sizes without compression".into(),
            ));
        }
        let upper = mu / (c * beta);
        if !(theta4 > 0.0 && theta4 < upper) {
            return Err(Error::Parameter(format!("theta4 = {theta4} must lie in (0, mu/(C beta)) = (0, {upper})")));
        }
        let theta1 = 1.0 / (2.0 * lambda_max_pinv);
        let theta2 = c * beta / (2.0 * (1.0 + c));
        let theta3 = theta1.min(theta2);
        let eta_star = 2.0 * (mu - c * beta * theta4) / (mu * mu);
        let s = 3.0 * c + 1.0;
        let root = (s - (s * s - 4.0 * c).sqrt()) / (c * beta * theta4);
        let theta5 = (2.0 / (mu + lipschitz)).min(eta_star).min(root).min(2.0 / (beta * theta4));
        Ok(Self { consts, thetas: Thetas { theta1, theta2, theta3, theta4, eta_star, theta5 } })
    }

    pub fn at(&self, k: u64) -> LeadParams {
        let t = &self.thetas;
        let eta = 2.0 * t.theta5 / (t.theta3 * t.theta4 * t.theta5 * k as f64 + 2.0);
        let gamma = t.theta4 * eta;
        let c = self.consts.c;
        LeadParams { eta, gamma, alpha: c * self.consts.beta * gamma / (2.0 * (1.0 + c)) }
    }
}

/// `(η_k, γ_k, α_k)` of the diminishing schedule.
pub fn diminishing_schedule(consts: &ProblemConstants, theta4: f64, k: u64) -> Result<(f64, f64, f64)> {
    let p = Schedule::new(*consts, theta4)?.at(k);
    Ok((p.eta, p.gamma, p.alpha))
}

/// Fixed point `(X*, D*)` and metric for the Lyapunov function.
#[derive(Debug, Clone)]
pub struct LyapunovRef {
    pub x_star: DMatrix<f64>,
    /// `−∇F(X*)` from exact gradients.
    pub d_star: DMatrix<f64>,
    pub pinv_iw: DMatrix<f64>,
    pub c: f64,
    pub beta: f64,
}

impl LyapunovRef {
    pub fn new(problem: &Problem, mixing: &MixingMatrix, c: f64) -> Self {
        Self {
            x_star: problem.optimum_matrix(),
            d_star: problem.optimal_dual(),
            pinv_iw: mixing.pinv_iw().clone(),
            c,
            beta: mixing.beta(),
        }
    }

    /// `(1−a₁α)‖X−X*‖² + (2η²/γ)‖D−D*‖²_{(I−W)†} + a₁‖H−X*‖²`.
    pub fn value(&self, x: &DMatrix<f64>, d: &DMatrix<f64>, h: &DMatrix<f64>, params: &LeadParams) -> f64 {
        let a = a1(self.c, self.beta, params.gamma);
        let dd = d - &self.d_star;
        let dual = (dd.transpose() * &self.pinv_iw * &dd).trace().max(0.0);
        (1.0 - a * params.alpha) * (x - &self.x_star).norm_squared()
            + 2.0 * params.eta * params.eta / params.gamma * dual
            + a * (h - &self.x_star).norm_squared()
    }
}

pub fn lyapunov(state: &SwarmState, reference: &LyapunovRef, params: &LeadParams) -> f64 {
    reference.value(&state.x, &state.d_dual, &state.h, params)
}
