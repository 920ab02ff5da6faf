use std::collections::HashSet;

use super::{Mat, NumError};

/// Symmetric sparse matrix stored as its strict upper triangle plus diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    dim: usize,
    diag: Vec<f64>,
    upper: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    /// Validates and builds a matrix. `upper` entries must satisfy `i < j`,
    /// contain no duplicate pair and be finite.
    pub fn new(dim: usize, diag: Vec<f64>, upper: Vec<(usize, usize, f64)>) -> Result<Self, NumError> {
        if diag.len() != dim {
            return Err(NumError::Shape(format!(
                "diagonal has {} entries for a {dim}-dimensional matrix",
                diag.len()
            )));
        }
        if diag.iter().any(|d| !d.is_finite()) {
            return Err(NumError::NonFinite("sparse diagonal".into()));
        }
        let mut seen = HashSet::with_capacity(upper.len());
        for &(i, j, w) in &upper {
            if i >= j || j >= dim {
                return Err(NumError::Shape(format!(
                    "entry ({i}, {j}) is not strictly upper triangular in dimension {dim}"
                )));
            }
            if !w.is_finite() {
                return Err(NumError::NonFinite(format!("sparse entry ({i}, {j})")));
            }
            if !seen.insert((i, j)) {
                return Err(NumError::Shape(format!("duplicate entry ({i}, {j})")));
            }
        }
        Ok(SparseSym { dim, diag, upper })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseSym {
            dim,
            diag: vec![0.0; dim],
            upper: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    /// Dense copy, mainly for tests and diagnostics.
    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for (i, &d) in self.diag.iter().enumerate() {
            m.set(i, i, d);
        }
        for &(i, j, w) in &self.upper {
            m.set(i, j, w);
            m.set(j, i, w);
        }
        m
    }

    /// Block-diagonal matrix made of `copies` copies of `self`.
    pub fn block_repeat(&self, copies: usize) -> SparseSym {
        let mut diag = Vec::with_capacity(self.dim * copies);
        let mut upper = Vec::with_capacity(self.upper.len() * copies);
        for c in 0..copies {
            let off = c * self.dim;
            diag.extend_from_slice(&self.diag);
            upper.extend(self.upper.iter().map(|&(i, j, w)| (i + off, j + off, w)));
        }
        SparseSym {
            dim: self.dim * copies,
            diag,
            upper,
        }
    }
}

/// Dense product `L · q`, expanding each stored off-diagonal entry to both triangles.
pub fn spmul(l: &SparseSym, q: &Mat) -> Result<Mat, NumError> {
    if l.dim != q.rows() {
        return Err(NumError::Shape(format!(
            "spmul: operator of dimension {} applied to {} rows",
            l.dim,
            q.rows()
        )));
    }
    Ok(spmul_unchecked(l, q))
}

pub(crate) fn spmul_unchecked(l: &SparseSym, q: &Mat) -> Mat {
    let cols = q.cols();
    let mut out = Mat::zeros(q.rows(), cols);
    for (i, &d) in l.diag.iter().enumerate() {
        if d != 0.0 {
            for (o, v) in out.row_mut(i).iter_mut().zip(q.row(i)) {
                *o = d * v;
            }
        }
    }
    let data = out.data_mut();
    for &(i, j, w) in &l.upper {
        let (qi, qj) = (q.row(i), q.row(j));
        for c in 0..cols {
            data[i * cols + c] += w * qj[c];
            data[j * cols + c] += w * qi[c];
        }
    }
    out
}
