use nalgebra::DMatrix;

use crate::topology::MixingMatrix;
use crate::{Error, Result};

fn same_shape(name: &str, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, iterate is {}x{}",
            b.nrows(),
            b.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_mixing(x: &DMatrix<f64>, w: &MixingMatrix) -> Result<()> {
    if w.n() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mixing matrix is {}x{}, iterate has {} rows",
            w.n(),
            w.n(),
            x.nrows()
        )));
    }
    Ok(())
}

/// `X⁺ = ((I + W)/2)(2X − X⁻ − η∇F(X) + η∇F(X⁻))`.
pub fn nids_step(
    x: &DMatrix<f64>,
    x_prev: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    grad_prev: &DMatrix<f64>,
    w: &MixingMatrix,
    eta: f64,
) -> Result<DMatrix<f64>> {
    check_mixing(x, w)?;
    same_shape("previous iterate", x, x_prev)?;
    same_shape("gradient", x, grad)?;
    same_shape("previous gradient", x, grad_prev)?;
    Ok(nids_raw(x, x_prev, grad, grad_prev, w.w(), eta))
}

fn nids_raw(
    x: &DMatrix<f64>,
    x_prev: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    grad_prev: &DMatrix<f64>,
    w: &DMatrix<f64>,
    eta: f64,
) -> DMatrix<f64> {
    let z = x * 2.0 - x_prev - grad * eta + grad_prev * eta;
    (&z + w * &z) * 0.5
}

/// `X⁺ = W·X − η·G`.
pub fn dgd_step(x: &DMatrix<f64>, grad: &DMatrix<f64>, w: &MixingMatrix, eta: f64) -> Result<DMatrix<f64>> {
    check_mixing(x, w)?;
    same_shape("gradient", x, grad)?;
    Ok(w.mix(x) - grad * eta)
}
