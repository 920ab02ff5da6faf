use serde::{Deserialize, Serialize};

use crate::graphlap::PatchGrid;
use crate::numcore::{Mat, NumError};

/// One sample's backbone patch features: `n = h_p·w_p` rows of `d_in` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    grid: PatchGrid,
    x: Mat,
}

impl FeatureGrid {
    pub fn new(grid: PatchGrid, x: Mat) -> Result<Self, NumError> {
        if x.rows() != grid.n() {
            return Err(NumError::Shape(format!(
                "{}x{} grid needs {} feature rows, got {}",
                grid.h_p,
                grid.w_p,
                grid.n(),
                x.rows()
            )));
        }
        if !x.is_finite() {
            return Err(NumError::NonFinite("patch features".into()));
        }
        Ok(FeatureGrid { grid, x })
    }

    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn d_in(&self) -> usize {
        self.x.cols()
    }

    pub fn features(&self) -> &Mat {
        &self.x
    }

    /// `copies` disconnected replicas stacked row-wise on a `(copies·h_p)×w_p` grid.
    pub fn replicate(&self, copies: usize) -> FeatureGrid {
        FeatureGrid {
            grid: PatchGrid::new(self.grid.h_p * copies, self.grid.w_p),
            x: self.x.tile_rows(copies),
        }
    }
}

/// Shape triple shared by a dataset and the model that consumes it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub h_p: usize,
    pub w_p: usize,
    pub d_in: usize,
}

impl GridShape {
    pub fn patch_grid(&self) -> PatchGrid {
        PatchGrid::new(self.h_p, self.w_p)
    }
}
