//! Gossip mixing matrices.
//!
//! A [`MixingMatrix`] is a validated symmetric doubly-stochastic matrix `W`
//! with exactly one unit eigenvalue, bundled with the spectral constants the
//! rate calculators need: `beta = λ_max(I − W)`, the smallest nonzero
//! eigenvalue of `I − W`, their ratio `kappa_g`, and the pseudoinverse
//! `(I − W)†`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Tolerance on row sums (and on `W·1 = 1`).
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Relative threshold separating zero from nonzero eigenvalues of `I − W`.
pub const ZERO_EIG_REL: f64 = 1e-10;
/// Largest asymmetry accepted from a loaded file before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Spectral quantities of `I − W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStats {
    /// `λ_max(I − W)`.
    pub beta: f64,
    /// Smallest nonzero eigenvalue of `I − W`.
    pub lambda_min_plus: f64,
    /// `beta / lambda_min_plus`.
    pub kappa_g: f64,
    /// Moore–Penrose pseudoinverse of `I − W`.
    pub pinv_iw: DMatrix<f64>,
    /// Eigenvalues of `W`, descending.
    pub w_eigenvalues: Vec<f64>,
    /// Number of eigenvalues of `I − W` treated as zero.
    pub null_dim: usize,
}

/// Computes the spectral statistics of a symmetric `w` (not validated here
/// beyond squareness; see [`validate`]).
pub fn spectral_stats(w: &DMatrix<f64>) -> Result<SpectralStats> {
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "mixing matrix must be square and non-empty, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let iw = DMatrix::<f64>::identity(n, n) - w;
    let eig = SymmetricEigen::try_new(iw, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite eigenvalue".into()));
    }

    let beta = eig.eigenvalues.max();
    if beta <= 0.0 {
        return Err(Error::Validation(
            "I - W has no positive eigenvalue (W = I is disconnected)".into(),
        ));
    }
    let threshold = ZERO_EIG_REL * beta;

    let mut pinv = DMatrix::<f64>::zeros(n, n);
    let mut lambda_min_plus = f64::INFINITY;
    let mut null_dim = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= threshold {
            null_dim += 1;
            continue;
        }
        lambda_min_plus = lambda_min_plus.min(lam);
        let v = eig.eigenvectors.column(k);
        pinv += (v * v.transpose()) / lam;
    }
    let pinv_iw = (&pinv + pinv.transpose()) * 0.5;

    let mut w_eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 - l).collect();
    w_eigenvalues.sort_by(|a, b| b.total_cmp(a));

    Ok(SpectralStats {
        beta,
        lambda_min_plus,
        kappa_g: beta / lambda_min_plus,
        pinv_iw,
        w_eigenvalues,
        null_dim,
    })
}

/// Structural checks shared by every constructor. Returns the spectral
/// statistics on success so callers need not recompute them.
pub fn validate(w: &DMatrix<f64>) -> Result<SpectralStats> {
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        return Err(Error::Validation(format!(
            "matrix must be square and non-empty, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if let Some(k) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("entry {k} is not finite")));
    }
    for i in 0..n {
        for j in 0..i {
            if w[(i, j)] != w[(j, i)] {
                return Err(Error::Validation(format!(
                    "not symmetric: w[{i},{j}] = {} but w[{j},{i}] = {}",
                    w[(i, j)],
                    w[(j, i)]
                )));
            }
        }
    }
    if let Some(((i, j), v)) = w
        .iter()
        .enumerate()
        .map(|(k, v)| ((k % n, k / n), *v))
        .find(|(_, v)| *v < 0.0)
    {
        return Err(Error::Validation(format!(
            "not doubly stochastic: negative weight w[{i},{j}] = {v}"
        )));
    }
    for (i, row) in w.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!(
                "not doubly stochastic: row {i} sums to {s}"
            )));
        }
    }

    let stats = spectral_stats(w)?;
    let lam_min = *stats.w_eigenvalues.last().expect("n >= 1");
    if lam_min <= -1.0 + ZERO_EIG_REL {
        return Err(Error::Validation(format!(
            "eigenvalue {lam_min} of W is not in (-1, 1]; the graph is bipartite or W is not primitive"
        )));
    }
    if stats.null_dim != 1 {
        return Err(Error::Validation(format!(
            "eigenvalue 1 of W has multiplicity {}; the graph is disconnected",
            stats.null_dim
        )));
    }
    Ok(stats)
}

/// A validated gossip matrix with cached spectral constants.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    stats: SpectralStats,
}

impl MixingMatrix {
    /// Validates `w` and caches its spectral statistics.
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let stats = validate(&w)?;
        Ok(Self { w, stats })
    }

    /// Ring of `n` agents: `self_weight` on the diagonal and
    /// `(1 − self_weight)/2` to each of the two neighbours.
    pub fn ring(n: usize, self_weight: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!(
                "a ring needs at least 3 agents, got {n}"
            )));
        }
        if !(self_weight > 0.0 && self_weight < 1.0) {
            return Err(Error::InvalidTopology(format!(
                "self weight must lie in (0, 1), got {self_weight}"
            )));
        }
        let neighbor = (1.0 - self_weight) / 2.0;
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            w[(i, i)] = self_weight;
            w[(i, (i + 1) % n)] += neighbor;
            w[(i, (i + n - 1) % n)] += neighbor;
        }
        Self::new(w)
    }

    /// `W = 11ᵀ/n`.
    pub fn fully_connected(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("need at least one agent".into()));
        }
        Self::new(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    /// Parses CSV text: `n` lines of `n` comma-separated decimals.
    ///
    /// Off-diagonal pairs may differ by at most [`SYMMETRY_TOL`] (decimal
    /// round-off); they are averaged so the stored matrix is exactly
    /// symmetric.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, line)| {
                line.split(',')
                    .map(|cell| {
                        cell.trim().parse::<f64>().map_err(|_| {
                            Error::Validation(format!(
                                "line {}: cannot parse {:?} as a number",
                                i + 1,
                                cell.trim()
                            ))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if n == 0 {
            return Err(Error::Validation("empty matrix file".into()));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Validation(format!(
                "line {} has {} entries, expected {n}",
                i + 1,
                r.len()
            )));
        }
        let mut w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (w[(i, j)], w[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::Validation(format!(
                        "not symmetric: w[{i},{j}] = {a} but w[{j},{i}] = {b}"
                    )));
                }
                let m = 0.5 * (a + b);
                w[(i, j)] = m;
                w[(j, i)] = m;
            }
        }
        Self::new(w)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// CSV text that parses back to the identical matrix.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in self.w.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn stats(&self) -> &SpectralStats {
        &self.stats
    }

    pub fn beta(&self) -> f64 {
        self.stats.beta
    }

    pub fn lambda_min_plus(&self) -> f64 {
        self.stats.lambda_min_plus
    }

    pub fn kappa_g(&self) -> f64 {
        self.stats.kappa_g
    }

    pub fn pinv_iw(&self) -> &DMatrix<f64> {
        &self.stats.pinv_iw
    }

    /// `λ_max((I − W)†) = 1 / lambda_min_plus`.
    pub fn lambda_max_pinv(&self) -> f64 {
        1.0 / self.stats.lambda_min_plus
    }

    /// `max(|λ₂(W)|, |λ_n(W)|)`, the per-step contraction of pure gossip on
    /// the disagreement subspace.
    pub fn second_largest_modulus(&self) -> f64 {
        self.stats.w_eigenvalues[1..]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `W·X` for an `n × d` stack of row vectors.
    pub fn mix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.w * x
    }

    /// `(I − W)·X`.
    pub fn laplacian(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - &self.w * x
    }
}
