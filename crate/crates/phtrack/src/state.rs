use nalgebra::{DVector, DVectorView};

use crate::error::{Error, Result};

/// Concatenated state of an electromechanical plant.
///
/// The flattening order is fixed as `[q; p; x_e]` and is shared by every
/// consumer (gradients, Hessians, vector fields, error norms).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_m: usize,
    n_e: usize,
    data: DVector<f64>,
}

impl StateVector {
    /// Assemble a state from its mechanical and electrical parts.
    pub fn new(q: DVector<f64>, p: DVector<f64>, x_e: DVector<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                context: "StateVector::new (p vs q)",
                expected: q.len(),
                got: p.len(),
            });
        }
        let n_m = q.len();
        let n_e = x_e.len();
        let mut data = DVector::zeros(2 * n_m + n_e);
        data.rows_mut(0, n_m).copy_from(&q);
        data.rows_mut(n_m, n_m).copy_from(&p);
        data.rows_mut(2 * n_m, n_e).copy_from(&x_e);
        Ok(Self { n_m, n_e, data })
    }

    /// Interpret a flat vector as `[q; p; x_e]` with the given dimensions.
    pub fn from_flat(n_m: usize, n_e: usize, data: DVector<f64>) -> Result<Self> {
        if data.len() != 2 * n_m + n_e {
            return Err(Error::DimensionMismatch {
                context: "StateVector::from_flat",
                expected: 2 * n_m + n_e,
                got: data.len(),
            });
        }
        Ok(Self { n_m, n_e, data })
    }

    pub fn from_slice(n_m: usize, n_e: usize, data: &[f64]) -> Result<Self> {
        Self::from_flat(n_m, n_e, DVector::from_column_slice(data))
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    /// Total state dimension `2 n_m + n_e`.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn q(&self) -> DVectorView<'_, f64> {
        self.data.rows(0, self.n_m)
    }

    pub fn p(&self) -> DVectorView<'_, f64> {
        self.data.rows(self.n_m, self.n_m)
    }

    pub fn x_e(&self) -> DVectorView<'_, f64> {
        self.data.rows(2 * self.n_m, self.n_e)
    }

    pub fn as_flat(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_flat(self) -> DVector<f64> {
        self.data
    }
}
