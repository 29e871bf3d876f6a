//! Steppers (LEAD, NIDS, DGD) and the step-size calculators.
//!
//! Iterates are stacked as `n × d` matrices, one row per agent.

mod agent;
mod baselines;
mod lead;
mod params;

pub use agent::{AgentNode, AgentSwarm};
pub use baselines::{dgd_step, nids_step};
pub use lead::{lead_init, lead_step, LeadContext, StepTrace, SwarmState};
pub use params::{
    a1, concrete_params, diminishing_schedule, lyapunov, ConcreteParams, ConcreteCase, LeadParams,
    LyapunovRef, ProblemConstants, RateCertificate, RhoTerm, Schedule, ConstantStep, Thetas,
};

use nalgebra::DMatrix;

/// `‖X − 1X̄‖_F`.
pub fn consensus_error(x: &DMatrix<f64>) -> f64 {
    let mean = x.row_mean();
    let mut s = 0.0;
    for i in 0..x.nrows() {
        s += (x.row(i) - &mean).norm_squared();
    }
    s.sqrt()
}
