//! LEAD written per agent, each node touching only its own vectors and the
//! messages of its neighbours. Kept as an independent check of the matrix
//! form in `lead.rs`.

use nalgebra::DMatrix;

use super::{LeadContext, LeadParams, SwarmState};
use crate::compression::KeyedDither;
use crate::Result;

/// One node's local memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNode {
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub h: Vec<f64>,
    pub h_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSwarm {
    pub nodes: Vec<AgentNode>,
    pub round: u64,
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

impl AgentSwarm {
    pub fn from_state(s: &SwarmState) -> Self {
        let nodes = (0..s.x.nrows())
            .map(|i| AgentNode { x: row(&s.x, i), d: row(&s.d_dual, i), h: row(&s.h, i), h_w: row(&s.h_w, i) })
            .collect();
        Self { nodes, round: s.round }
    }

    pub fn x(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let d = self.nodes.first().map_or(0, |a| a.x.len());
        DMatrix::from_fn(n, d, |i, j| self.nodes[i].x[j])
    }

    pub fn step(&mut self, ctx: &LeadContext<'_>, params: &LeadParams) -> Result<()> {
        params.validate()?;
        let k = self.round;
        let (eta, gamma, alpha) = (params.eta, params.gamma, params.alpha);
        let n = self.nodes.len();
        let w = ctx.mixing.w();

        // local: gradient, y, compressed difference
        let mut grads = Vec::with_capacity(n);
        let mut qs = Vec::with_capacity(n);
        for (i, a) in self.nodes.iter().enumerate() {
            let xi = nalgebra::DVector::from_column_slice(&a.x);
            let g: Vec<f64> = ctx.problem.sample_row(i, &xi, ctx.noise, &ctx.streams, k)?.iter().copied().collect();
            let y: Vec<f64> = (0..a.x.len()).map(|j| a.x[j] - eta * g[j] - eta * a.d[j]).collect();
            let diff: Vec<f64> = y.iter().zip(&a.h).map(|(y, h)| y - h).collect();
            let mut dither = KeyedDither::new(ctx.streams, k, i as u64);
            let (q, _) = ctx.compressor.compress(&diff, &mut dither)?;
            grads.push(g);
            qs.push(q);
        }

        // exchange q with neighbours, then update
        for (i, a) in self.nodes.iter_mut().enumerate() {
            for j in 0..a.x.len() {
                let y_hat = a.h[j] + qs[i][j];
                let mut wq = 0.0;
                for (m, q) in qs.iter().enumerate() {
                    if w[(i, m)] != 0.0 {
                        wq += w[(i, m)] * q[j];
                    }
                }
                let y_hat_w = a.h_w[j] + wq;
                a.h[j] = (1.0 - alpha) * a.h[j] + alpha * y_hat;
                a.h_w[j] = (1.0 - alpha) * a.h_w[j] + alpha * y_hat_w;
                a.d[j] += gamma / (2.0 * eta) * (y_hat - y_hat_w);
                a.x[j] = a.x[j] - eta * grads[i][j] - eta * a.d[j];
            }
        }
        self.round += 1;
        Ok(())
    }
}
