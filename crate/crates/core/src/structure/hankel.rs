use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};
use crate::model::{Dims, ImpulseResponse};

/// Linear map from an impulse response to its `rp × cm` block Hankel matrix,
/// whose block `(i, j)` (1-based) is `g_{i+j-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelMap {
    pub rows: usize,
    pub cols: usize,
    pub dims: Dims,
}

impl HankelMap {
    pub fn new(dims: Dims, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(dim_err("Hankel matrix needs at least one block row and column"));
        }
        if rows + cols - 1 > dims.lags {
            return Err(dim_err(format!(
                "{rows}×{cols} block Hankel matrix needs {} lags, only {} available",
                rows + cols - 1,
                dims.lags
            )));
        }
        Ok(Self { rows, cols, dims })
    }

    /// Near-square shape using every lag: `r = ⌈(T+1)/2⌉`, `c = T + 1 − r`.
    pub fn square(dims: Dims) -> Result<Self> {
        let r = (dims.lags + 2) / 2;
        Self::new(dims, r, dims.lags + 1 - r)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows * self.dims.outputs, self.cols * self.dims.inputs)
    }

    fn check(&self, g: &DVector<f64>) -> Result<()> {
        if g.len() != self.dims.d() {
            return Err(dim_err(format!("expected {} coefficients, got {}", self.dims.d(), g.len())));
        }
        Ok(())
    }

    pub fn apply(&self, g: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(g)?;
        let Dims { lags, outputs: p, inputs: m } = self.dims;
        let (nr, nc) = self.shape();
        Ok(DMatrix::from_fn(nr, nc, |row, col| {
            let (bi, a) = (row / p, row % p);
            let (bj, b) = (col / m, col % m);
            g[(a + p * b) * lags + bi + bj]
        }))
    }

    /// Adjoint: every entry of `m` is added to the coefficient it was copied from.
    pub fn adjoint(&self, mat: &DMatrix<f64>) -> Result<DVector<f64>> {
        let Dims { lags, outputs: p, inputs: m } = self.dims;
        if mat.shape() != self.shape() {
            return Err(dim_err(format!("expected a {:?} matrix, got {:?}", self.shape(), mat.shape())));
        }
        let mut g = DVector::zeros(self.dims.d());
        for col in 0..mat.ncols() {
            for row in 0..mat.nrows() {
                let (bi, a) = (row / p, row % p);
                let (bj, b) = (col / m, col % m);
                g[(a + p * b) * lags + bi + bj] += mat[(row, col)];
            }
        }
        Ok(g)
    }

    /// Explicit `(rp·cm) × d` matrix acting on `g` and returning `vec(H(g))`
    /// (column-major).
    pub fn matrix(&self) -> DMatrix<f64> {
        let Dims { lags, outputs: p, inputs: m } = self.dims;
        let (nr, nc) = self.shape();
        let mut out = DMatrix::zeros(nr * nc, self.dims.d());
        for col in 0..nc {
            for row in 0..nr {
                let (bi, a) = (row / p, row % p);
                let (bj, b) = (col / m, col % m);
                out[(col * nr + row, (a + p * b) * lags + bi + bj)] = 1.0;
            }
        }
        out
    }

    /// Diagonal of `HᵀH`: how many times each coefficient appears in `H(g)`.
    pub fn multiplicity(&self) -> DVector<f64> {
        let ones = DMatrix::from_element(self.shape().0, self.shape().1, 1.0);
        self.adjoint(&ones).expect("shape matches by construction")
    }
}

/// Block Hankel matrix of `g` with `r` block rows and `c` block columns.
pub fn hankel(g: &ImpulseResponse, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    HankelMap::new(g.dims(), rows, cols)?.apply(g.as_vec())
}

/// Adjoint of [`hankel`] for impulse responses with dimensions `dims`.
pub fn hankel_adjoint(mat: &DMatrix<f64>, dims: Dims, rows: usize, cols: usize) -> Result<ImpulseResponse> {
    let map = HankelMap::new(dims, rows, cols)?;
    ImpulseResponse::from_vec(dims, map.adjoint(mat)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_example() {
        let g = ImpulseResponse::siso(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = hankel(&g, 2, 3).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
        let h = hankel(&g, 1, 1).unwrap();
        assert_eq!(h, DMatrix::from_element(1, 1, 1.0));
        assert!(hankel(&g, 3, 3).is_err());
    }

    #[test]
    fn explicit_matrix_matches_operator() {
        let dims = Dims::new(5, 2, 3);
        let map = HankelMap::new(dims, 2, 3).unwrap();
        let g = DVector::from_fn(dims.d(), |i, _| (i as f64 * 0.37).sin());
        let h = map.apply(&g).unwrap();
        let v = map.matrix() * &g;
        assert_eq!(DVector::from_column_slice(h.as_slice()), v);
        assert_eq!(map.multiplicity(), map.matrix().tr_mul(&map.matrix()).diagonal());
    }

    #[test]
    fn square_shape_uses_all_lags() {
        let m = HankelMap::square(Dims::siso(10)).unwrap();
        assert_eq!((m.rows, m.cols), (6, 5));
        let m = HankelMap::square(Dims::siso(1)).unwrap();
        assert_eq!((m.rows, m.cols), (1, 1));
    }
}
