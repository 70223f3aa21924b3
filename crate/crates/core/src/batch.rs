use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row norms of normalized batches must be 1 within this tolerance.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// `|I|` embeddings in `R^q`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    data: DMatrix<f64>,
    normalized: bool,
}

impl EmbeddingBatch {
    /// Batch of unit vectors; fails when a row norm is off by more than
    /// [`UNIT_TOLERANCE`].
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        Self::check_nonempty(&data)?;
        for (i, row) in data.row_iter().enumerate() {
            let norm = row.norm();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Domain(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self {
            data,
            normalized: true,
        })
    }

    /// Rows rescaled to unit norm.
    pub fn normalizing(mut data: DMatrix<f64>) -> Result<Self> {
        Self::check_nonempty(&data)?;
        for mut row in data.row_iter_mut() {
            let norm = row.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Domain("cannot normalize a zero row".into()));
            }
            row /= norm;
        }
        Ok(Self {
            data,
            normalized: true,
        })
    }

    /// Free vectors (VICReg embeddings are not normalized).
    pub fn unnormalized(data: DMatrix<f64>) -> Result<Self> {
        Self::check_nonempty(&data)?;
        Ok(Self {
            data,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(rows)?)
    }

    fn check_nonempty(data: &DMatrix<f64>) -> Result<()> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape("batch must have at least one row and column".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("batch contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Number of embeddings `|I|`.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Ambient dimension `q`.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Same rows with an orthogonal map applied: `z ↦ R z`.
    pub fn rotated(&self, rotation: &DMatrix<f64>) -> Result<Self> {
        if rotation.nrows() != self.dim() || rotation.ncols() != self.dim() {
            return Err(Error::Shape("rotation must be q x q".into()));
        }
        Ok(Self {
            data: &self.data * rotation.transpose(),
            normalized: self.normalized,
        })
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stacked(&self, other: &EmbeddingBatch) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot stack q = {} with q = {}",
                self.dim(),
                other.dim()
            )));
        }
        let n = self.len();
        let mut data = DMatrix::zeros(n + other.len(), self.dim());
        data.rows_mut(0, n).copy_from(&self.data);
        data.rows_mut(n, other.len()).copy_from(&other.data);
        Ok(Self {
            data,
            normalized: self.normalized && other.normalized,
        })
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let q = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != q) {
        return Err(Error::Shape("ragged rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, q, &flat))
}
