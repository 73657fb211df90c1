use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Running `H = Σ XᵀX` over calibration rows for one module input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    pub h: Matrix<f64>,
    pub row_count: usize,
}

impl ActivationStats {
    pub fn new(d_in: usize) -> Self {
        Self {
            h: Matrix::zeros(d_in, d_in),
            row_count: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.h.rows()
    }

    /// `H += XᵀX` in 64-bit.
    pub fn accumulate<T: Scalar>(&mut self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.d_in() {
            return Err(Error::Input(format!(
                "activation width {} does not match module input {}",
                x.cols(),
                self.d_in()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Input("non-finite activation rows".into()));
        }
        let x64: Matrix<f64> = x.cast();
        let xtx = x64.t_matmul(&x64)?;
        self.h.add_assign(&xtx)?;
        self.row_count += x.rows();
        Ok(())
    }

    /// Combine statistics gathered on disjoint batches.
    pub fn merge(&mut self, other: &ActivationStats) -> Result<()> {
        self.h.add_assign(&other.h)?;
        self.row_count += other.row_count;
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        (0..self.d_in()).map(|i| self.h[(i, i)]).sum()
    }
}
