use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Discrete-time plant `x[k+1] = A·x[k] + B·u[k]`, `y[k] = C·x[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    #[serde(with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub c: DMatrix<f64>,
    /// Initial state; zero when omitted.
    #[serde(default, with = "vector_opt")]
    pub x: Option<DVector<f64>>,
    pub sample_interval_s: f64,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, sample_interval_s: f64) -> Result<Self> {
        let model = Self { a, b, c, x: None, sample_interval_s };
        model.validate()?;
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn initial_state(&self) -> DVector<f64> {
        self.x.clone().unwrap_or_else(|| DVector::zeros(self.states()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let dims = |what: &str| Err(Error::Dimension(what.to_owned()));
        if n == 0 || self.a.ncols() != n {
            return dims("A must be square and nonempty");
        }
        if self.b.nrows() != n || self.b.ncols() == 0 {
            return dims("B must have one row per state");
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            return dims("C must have one column per state");
        }
        if self.x.as_ref().is_some_and(|x| x.len() != n) {
            return dims("x must have one entry per state");
        }
        if !(self.sample_interval_s > 0.0) {
            return Err(Error::Validation("sample_interval_s must be positive".into()));
        }
        Ok(())
    }
}

/// Matrices as nested arrays, row-major.
pub(crate) mod matrix_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

pub(crate) mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::deserialize(d)?))
    }
}

pub(crate) mod vector_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_ref().map(|v| v.as_slice().to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}
