//! Fast Walsh–Hadamard transform (Sylvester order) and the Hadamard prism.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest order for which a prism is materialized densely by default.
pub const DENSE_PRISM_MAX_ORDER: usize = 12;

fn order_of(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(len));
    }
    Ok(len.trailing_zeros() as usize)
}

/// In-place `y <- H_p y` using the radix-2 butterfly.
pub fn fwht_in_place(y: &mut [f64]) -> Result<()> {
    order_of(y.len())?;
    let n = y.len();
    let mut h = 1;
    while h < n {
        for block in y.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, z) = (*a, *b);
                *a = x + z;
                *b = x - z;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Returns `H_p y`.
pub fn fwht(y: &[f64]) -> Result<Vec<f64>> {
    let mut out = y.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// Dense Sylvester Hadamard matrix `H_p`.
pub fn sylvester(p: usize) -> DMatrix<f64> {
    let n = 1usize << p;
    DMatrix::from_fn(n, n, |i, j| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
}

/// The Hadamard prism `η_p(y) = 2^{-p} H_p diag(H_p y) H_p`.
///
/// The prism is a group circulant over `(Z_2)^p`: entry `(Λ, Λ')` equals
/// `y[Λ XOR Λ']`. Only the symbol `y` is stored; blocks are formed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismMatrix {
    symbol: Vec<f64>,
    order: usize,
}

impl PrismMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.symbol.len()
    }

    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.symbol[row ^ col]
    }

    /// Submatrix on the given row and column indices.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.entry(rows[i], cols[j]))
    }

    /// Full `2^p × 2^p` matrix. Refuses orders above [`DENSE_PRISM_MAX_ORDER`].
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.order > DENSE_PRISM_MAX_ORDER {
            return Err(Error::LimitExceeded(format!(
                "dense prism of order {} exceeds {DENSE_PRISM_MAX_ORDER}; request blocks instead",
                self.order
            )));
        }
        let n = self.dim();
        Ok(DMatrix::from_fn(n, n, |i, j| self.entry(i, j)))
    }

    /// Eigenvalues in Sylvester order: `H_p y`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        fwht(&self.symbol).expect("symbol length is a power of two")
    }
}

pub fn prism(y: &[f64]) -> Result<PrismMatrix> {
    let order = order_of(y.len())?;
    Ok(PrismMatrix { symbol: y.to_vec(), order })
}

/// `η_p(y)` evaluated literally as `2^{-p} H diag(H y) H`.
pub fn prism_explicit(y: &[f64]) -> Result<DMatrix<f64>> {
    let p = order_of(y.len())?;
    let h = sylvester(p);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(fwht(y)?));
    Ok(&h * d * &h / (1u64 << p) as f64)
}

/// Eigenvalues of `η_p(y)`, which are exactly the coordinates of `H_p y`.
pub fn prism_eigenvalues(y: &[f64]) -> Result<Vec<f64>> {
    fwht(y)
}

/// `(Z_2)^p` convolution `(y * z)[k] = Σ_i y[i] z[i XOR k]`.
pub fn xor_convolution(y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let p = order_of(y.len())?;
    if z.len() != y.len() {
        return Err(Error::LengthMismatch { expected: y.len(), got: z.len() });
    }
    let mut fy = fwht(y)?;
    let fz = fwht(z)?;
    for (a, b) in fy.iter_mut().zip(&fz) {
        *a *= b;
    }
    fwht_in_place(&mut fy)?;
    let scale = (1u64 << p) as f64;
    Ok(fy.into_iter().map(|v| v / scale).collect())
}

/// Checks `η_{d+1}([y1; y2]) = [[η_d(y1), η_d(y2)], [η_d(y2), η_d(y1)]]`
/// within `1e-12`, evaluating both sides with the explicit formula.
pub fn prism_recursion_check(y1: &[f64], y2: &[f64]) -> Result<bool> {
    if y1.len() != y2.len() {
        return Err(Error::LengthMismatch { expected: y1.len(), got: y2.len() });
    }
    let n = y1.len();
    let stacked: Vec<f64> = y1.iter().chain(y2).copied().collect();
    let big = prism_explicit(&stacked)?;
    let e1 = prism_explicit(y1)?;
    let e2 = prism_explicit(y2)?;
    for i in 0..2 * n {
        for j in 0..2 * n {
            let same_half = (i < n) == (j < n);
            let small = if same_half { &e1 } else { &e2 };
            if (big[(i, j)] - small[(i % n, j % n)]).abs() > 1e-12 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(y: &[f64]) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if (i & j).count_ones() % 2 == 0 { y[j] } else { -y[j] })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn order_one() {
        assert_eq!(fwht(&[3.0, 5.0]).unwrap(), vec![8.0, -2.0]);
        assert!(matches!(fwht(&[1.0, 2.0, 3.0]), Err(Error::NotPowerOfTwo(3))));
        assert!(matches!(fwht(&[]), Err(Error::NotPowerOfTwo(0))));
    }

    #[test]
    fn involution_up_to_scale() {
        let y: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let back = fwht(&fwht(&y).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&y) {
            assert!((a - 16.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_transform() {
        let y: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        assert_eq!(fwht(&y).unwrap(), naive(&y));
    }

    #[test]
    fn prism_order_one() {
        let m = prism(&[0.3, -0.7]).unwrap().to_dense().unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.3, -0.7, -0.7, 0.3]));
        let e = prism_explicit(&[0.3, -0.7]).unwrap();
        assert!((e - m).abs().max() < 1e-15);
    }

    #[test]
    fn prism_of_unit_is_identity() {
        let mut y = vec![0.0; 8];
        y[0] = 1.0;
        assert_eq!(prism(&y).unwrap().to_dense().unwrap(), DMatrix::identity(8, 8));
    }

    #[test]
    fn prism_eigenvalues_two_by_two() {
        assert_eq!(prism_eigenvalues(&[1.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(prism_eigenvalues(&[1.0, 0.5]).unwrap(), vec![1.5, 0.5]);
    }

    #[test]
    fn recursion_special_cases() {
        let y1 = [0.1, 0.4, -0.2, 0.9];
        assert!(prism_recursion_check(&y1, &[0.0; 4]).unwrap());
        assert!(prism_recursion_check(&y1, &y1).unwrap());
        let big = prism(&[0.1, 0.4, -0.2, 0.9, 0.0, 0.0, 0.0, 0.0]).unwrap().to_dense().unwrap();
        assert_eq!(big.view((0, 4), (4, 4)).abs().max(), 0.0);
    }

    #[test]
    fn lazy_blocks_and_dense_cap() {
        let mut y = vec![0.0; 1 << 13];
        y[5] = 2.0;
        let pm = prism(&y).unwrap();
        assert!(pm.to_dense().is_err());
        let b = pm.block(&[0, 1, 4], &[5, 4]);
        assert_eq!(b, DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 2.0, 0.0, 0.0]));
    }
}
