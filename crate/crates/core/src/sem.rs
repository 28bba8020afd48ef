//! Subject data and the linear SEM reconstruction loss.
//!
//! The loss `(1/2m)‖X − XW‖²_F` only depends on `X` through its Gram matrix:
//! with `S = XᵀX / m` it equals `½ tr((I − W)ᵀ S (I − W))`. The Gram matrix is
//! computed once when a [`SubjectData`] is built and the solvers work from
//! [`QuadLoss`] alone.

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

/// One subject's measurements together with its cached Gram matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectData {
    id: usize,
    x: Matrix,
    gram: Matrix,
}

impl SubjectData {
    pub fn new(id: usize, x: Matrix) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid(format!("subject {id} has no rows")));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid(format!("subject {id} has no variables")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("subject {id} has non-finite data")));
        }
        let gram = x.tr_mul(&x);
        Ok(Self { id, x, gram })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    /// Number of measurements `m_i`.
    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    /// Number of variables `d`.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// Subset of rows, with a freshly computed Gram matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows.iter());
        Self::new(self.id, x)
    }

    pub fn loss(&self) -> QuadLoss {
        QuadLoss::from_subject(self)
    }
}

/// `½ tr((I − W)ᵀ S (I − W))` for a fixed PSD matrix `S`.
///
/// A single subject gives `S = XᵀX / m`; pooled fits sum the per-subject `S`.
#[derive(Debug, Clone)]
pub struct QuadLoss {
    scaled_gram: Matrix,
}

impl QuadLoss {
    pub fn from_subject(subject: &SubjectData) -> Self {
        Self {
            scaled_gram: subject.gram() / subject.m() as f64,
        }
    }

    /// Sum of the per-subject losses; all subjects must share `d`.
    pub fn pooled<'a>(subjects: impl IntoIterator<Item = &'a SubjectData>) -> Result<Self> {
        let mut acc: Option<Matrix> = None;
        for s in subjects {
            let term = s.gram() / s.m() as f64;
            match &mut acc {
                None => acc = Some(term),
                Some(a) if a.nrows() == term.nrows() => *a += term,
                Some(a) => {
                    return Err(Error::invalid(format!(
                        "subject {} has d = {}, expected {}",
                        s.id(),
                        term.nrows(),
                        a.nrows()
                    )))
                }
            }
        }
        acc.map(|scaled_gram| Self { scaled_gram })
            .ok_or_else(|| Error::invalid("no subjects to pool"))
    }

    pub fn d(&self) -> usize {
        self.scaled_gram.nrows()
    }

    fn check(&self, w: &Matrix) -> Result<()> {
        let d = self.d();
        if w.nrows() != d || w.ncols() != d {
            return Err(Error::invalid(format!(
                "weight matrix is {}x{}, data has d = {d}",
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(())
    }

    pub fn value(&self, w: &Matrix) -> Result<f64> {
        self.check(w)?;
        Ok(self.value_unchecked(w))
    }

    pub fn grad(&self, w: &Matrix) -> Result<Matrix> {
        self.check(w)?;
        Ok(self.value_grad_unchecked(w).1)
    }

    pub(crate) fn value_unchecked(&self, w: &Matrix) -> f64 {
        self.value_grad_unchecked(w).0
    }

    /// Value and gradient `−S (I − W)` without dimension checks.
    pub(crate) fn value_grad_unchecked(&self, w: &Matrix) -> (f64, Matrix) {
        let d = self.d();
        let resid = Matrix::identity(d, d) - w;
        let s_resid = &self.scaled_gram * &resid;
        let value = 0.5 * resid.dot(&s_resid);
        (value.max(0.0), -s_resid)
    }
}

/// Reconstruction loss `(1/2m)‖X − XW‖²_F`, evaluated from the Gram matrix.
pub fn reconstruction_loss(subject: &SubjectData, w: &Matrix) -> Result<f64> {
    subject.loss().value(w)
}

/// Gradient of [`reconstruction_loss`]: `−(1/m) XᵀX (I − W)`.
pub fn reconstruction_grad(subject: &SubjectData, w: &Matrix) -> Result<Matrix> {
    subject.loss().grad(w)
}
