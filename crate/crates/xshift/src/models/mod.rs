//! Regression models: ordinary least squares and gradient boosted trees.

pub mod gbdt;
pub mod linear;

pub use gbdt::{fit_gbdt, GbdtConfig, GbdtModel, Tree, TreeNode};
pub use linear::{fit_ols, fit_ridge, LinearModel};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum Model {
    Linear(LinearModel),
    Gbdt(GbdtModel),
}

impl Model {
    pub fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_features(),
            Model::Gbdt(m) => m.n_features(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Linear(m) => m.predict_row(row),
            Model::Gbdt(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, data has {}",
                self.n_features(),
                x.n_cols()
            )));
        }
        Ok(x.rows_iter().map(|r| self.predict_row(r)).collect())
    }
}

pub fn mean_squared_error(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::invalid(
            "mean_squared_error needs equal-length nonempty slices",
        ));
    }
    let mut s = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        let d = p - t;
        s += d * d;
    }
    Ok(s / predictions.len() as f64)
}
