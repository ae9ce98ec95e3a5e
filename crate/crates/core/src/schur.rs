//! Rank-aware symmetric linear algebra: pseudoinverse, generalized Schur
//! complement of the center block, and the Schur–Banachiewicz inverse.

use nalgebra::DMatrix;

use crate::bitgroup::IndexSets;
use crate::error::{Error, Result};

/// Default bound on the row-space residual `|Σ[W,𝓑] - M Σ_𝓑|`.
pub const ROW_SPACE_TOL: f64 = 1e-8;

/// Relative cutoff for numerical rank: eigenvalues at or below
/// `factor · λ_max` are treated as zero. `None` uses `dim · ε`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RankTol(pub Option<f64>);

impl RankTol {
    pub fn relative(factor: f64) -> Self {
        Self(Some(factor))
    }

    pub fn factor(self, dim: usize) -> f64 {
        self.0.unwrap_or(dim as f64 * f64::EPSILON)
    }
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in i + 1..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Moore–Penrose inverse of a symmetric PSD matrix via eigendecomposition.
/// Returns the pseudoinverse and the numerical rank.
pub fn pinv_sym(a: &DMatrix<f64>, rank_tol: RankTol) -> Result<(DMatrix<f64>, usize)> {
    pinv_sym_scaled(a, rank_tol, 0.0)
}

/// [`pinv_sym`] with the cutoff taken relative to `max(λ_max, scale)`.
///
/// A matrix formed by cancellation (such as a Schur complement) carries
/// rounding error proportional to the terms that cancelled, not to its own
/// largest eigenvalue; `scale` supplies that magnitude.
pub fn pinv_sym_scaled(a: &DMatrix<f64>, rank_tol: RankTol, scale: f64) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::LengthMismatch { expected: n, got: a.ncols() });
    }
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0));
    }
    let asym = max_asymmetry(a);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = rank_tol.factor(n) * lambda_max.max(scale);

    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out.ger(1.0 / lambda, &v, &v, 1.0);
        }
    }
    symmetrize(&mut out);
    Ok((out, rank))
}

/// Numerical rank of a symmetric PSD matrix.
pub fn rank_sym(a: &DMatrix<f64>, rank_tol: RankTol) -> Result<usize> {
    pinv_sym(a, rank_tol).map(|(_, r)| r)
}

/// Interaction covariance ordered as `(𝓑, 𝓛, 𝓡)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPartition {
    pub sigma: DMatrix<f64>,
    pub labels: IndexSets,
}

impl SigmaPartition {
    pub fn new(sigma: DMatrix<f64>, labels: IndexSets) -> Result<Self> {
        let n = labels.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::LengthMismatch { expected: n, got: sigma.nrows() });
        }
        Ok(Self { sigma, labels })
    }

    pub fn n_center(&self) -> usize {
        self.labels.center.len()
    }

    pub fn n_left(&self) -> usize {
        self.labels.left.len()
    }

    pub fn n_right(&self) -> usize {
        self.labels.right.len()
    }

    /// Size of `𝓛 ∪ 𝓡` (shared masks counted twice).
    pub fn n_wings(&self) -> usize {
        self.n_left() + self.n_right()
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// `Σ_𝓑`.
    pub fn center(&self) -> DMatrix<f64> {
        let b = self.n_center();
        self.sigma.view((0, 0), (b, b)).into_owned()
    }

    /// `Σ[𝓛∪𝓡, 𝓑]`.
    pub fn wings_by_center(&self) -> DMatrix<f64> {
        let b = self.n_center();
        self.sigma.view((b, 0), (self.n_wings(), b)).into_owned()
    }

    /// `Σ[𝓛∪𝓡, 𝓛∪𝓡]`.
    pub fn wings(&self) -> DMatrix<f64> {
        let b = self.n_center();
        let w = self.n_wings();
        self.sigma.view((b, b), (w, w)).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchurResult {
    /// Generalized Schur complement on `𝓛 ∪ 𝓡`.
    pub s: DMatrix<f64>,
    pub s_pinv: DMatrix<f64>,
    /// `Σ_𝓑⁺`.
    pub center_pinv: DMatrix<f64>,
    /// `M = Σ[𝓛∪𝓡, 𝓑] Σ_𝓑⁺`; its first `|𝓛|` rows are `M_1`, the rest `M_2`.
    pub m: DMatrix<f64>,
    pub rank_b: usize,
    pub rank_s: usize,
    /// `max |Σ[𝓛∪𝓡, 𝓑] - M Σ_𝓑|`.
    pub residual: f64,
    pub n_left: usize,
}

impl SchurResult {
    /// `S[𝓛, 𝓡]`.
    pub fn offblock(&self) -> DMatrix<f64> {
        let l = self.n_left;
        let r = self.s.nrows() - l;
        self.s.view((0, l), (l, r)).into_owned()
    }

    pub fn max_offblock(&self) -> f64 {
        self.offblock().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

pub fn schur_complement(sp: &SigmaPartition, rank_tol: RankTol) -> Result<SchurResult> {
    let center = sp.center();
    let cross = sp.wings_by_center();
    let (center_pinv, rank_b) = pinv_sym(&center, rank_tol)?;
    let m = &cross * &center_pinv;
    let mut s = sp.wings() - &m * cross.transpose();
    symmetrize(&mut s);
    let residual = (&cross - &m * &center).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    // rounding in S is of order ε (‖Σ_WW‖ + ‖F‖² ‖Σ_𝓑⁺‖), the sizes of the
    // terms that cancel, rather than of S's own spectrum
    let wings = sp.wings();
    let wings_norm = if wings.is_empty() { 0.0 } else { wings.symmetric_eigenvalues().amax() };
    let center_pinv_norm = if center_pinv.is_empty() { 0.0 } else { center_pinv.symmetric_eigenvalues().amax() };
    let scale = wings_norm + cross.norm_squared() * center_pinv_norm;
    let (s_pinv, rank_s) = pinv_sym_scaled(&s, rank_tol, scale)?;
    Ok(SchurResult { s, s_pinv, center_pinv, m, rank_b, rank_s, residual, n_left: sp.n_left() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix {
    pub omega: DMatrix<f64>,
    /// `F = Σ[𝓑, 𝓛∪𝓡]`.
    pub f: DMatrix<f64>,
    /// `max |Σ Ω Σ - Σ|`.
    pub reflexive_residual: f64,
    pub n_center: usize,
    pub n_left: usize,
}

impl OmegaMatrix {
    /// `Ω[𝓛, 𝓡]`.
    pub fn offblock(&self) -> DMatrix<f64> {
        let (b, l) = (self.n_center, self.n_left);
        let r = self.omega.nrows() - b - l;
        self.omega.view((b, b + l), (l, r)).into_owned()
    }

    pub fn max_offblock(&self) -> f64 {
        self.offblock().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// `Ω[𝓛∪𝓡, 𝓛∪𝓡]`.
    pub fn wings(&self) -> DMatrix<f64> {
        let b = self.n_center;
        let w = self.omega.nrows() - b;
        self.omega.view((b, b), (w, w)).into_owned()
    }
}

/// Schur–Banachiewicz generalized inverse
///
/// ```text
/// Ω = [ Σ_𝓑⁺ + Σ_𝓑⁺ F S⁺ Fᵀ Σ_𝓑⁺   -Σ_𝓑⁺ F S⁺ ]
///     [ -S⁺ Fᵀ Σ_𝓑⁺                 S⁺         ]
/// ```
///
/// Fails when the row-space residual of `sr` exceeds `residual_tol`.
pub fn sb_inverse(sp: &SigmaPartition, sr: &SchurResult, residual_tol: f64) -> Result<OmegaMatrix> {
    if !(sr.residual <= residual_tol) {
        return Err(Error::RowSpaceDefect { residual: sr.residual, tol: residual_tol });
    }
    let b = sp.n_center();
    let w = sp.n_wings();
    let n = b + w;
    let f = sp.wings_by_center().transpose();
    // Σ_𝓑⁺ F = Mᵀ
    let upper_right = -(sr.m.transpose() * &sr.s_pinv);
    let mut upper_left = &sr.center_pinv - &upper_right * &sr.m;
    symmetrize(&mut upper_left);

    let mut omega = DMatrix::zeros(n, n);
    omega.view_mut((0, 0), (b, b)).copy_from(&upper_left);
    omega.view_mut((0, b), (b, w)).copy_from(&upper_right);
    omega.view_mut((b, 0), (w, b)).copy_from(&upper_right.transpose());
    omega.view_mut((b, b), (w, w)).copy_from(&sr.s_pinv);

    let reflexive_residual =
        (&sp.sigma * &omega * &sp.sigma - &sp.sigma).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(OmegaMatrix { omega, f, reflexive_residual, n_center: b, n_left: sp.n_left() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(b: usize, l: usize, r: usize) -> IndexSets {
        let mk = |start: u32, n: usize| {
            (0..n).map(|i| crate::bitgroup::Mask::new(start + i as u32, 8).unwrap()).collect()
        };
        IndexSets { center: mk(1, b), left: mk(64, l), right: mk(128, r), wings_overlap: false }
    }

    #[test]
    fn pinv_examples() {
        let (p, r) = pinv_sym(&DMatrix::identity(3, 3), RankTol::default()).unwrap();
        assert_eq!(r, 3);
        assert!((p - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-15);

        let ones = DMatrix::from_element(2, 2, 1.0);
        let (p, r) = pinv_sym(&ones, RankTol::default()).unwrap();
        assert_eq!(r, 1);
        assert!((p - DMatrix::from_element(2, 2, 0.25)).abs().max() < 1e-15);

        let (p, r) = pinv_sym(&DMatrix::zeros(4, 4), RankTol::default()).unwrap();
        assert_eq!(r, 0);
        assert_eq!(p, DMatrix::zeros(4, 4));

        let (p, r) = pinv_sym(&DMatrix::zeros(0, 0), RankTol::default()).unwrap();
        assert_eq!((p.nrows(), r), (0, 0));
    }

    #[test]
    fn pinv_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(pinv_sym(&a, RankTol::default()), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn schur_with_identity_center_and_zero_cross() {
        let mut sigma = DMatrix::identity(5, 5);
        sigma[(2, 3)] = 0.3;
        sigma[(3, 2)] = 0.3;
        let sp = SigmaPartition::new(sigma.clone(), labels(1, 2, 2)).unwrap();
        let sr = schur_complement(&sp, RankTol::default()).unwrap();
        assert_eq!(sr.s, sigma.view((1, 1), (4, 4)).into_owned());
        assert_eq!(sr.rank_b, 1);
        assert_eq!(sr.residual, 0.0);
    }

    #[test]
    fn empty_center_keeps_wings() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let sp = SigmaPartition::new(sigma.clone(), labels(0, 1, 1)).unwrap();
        let sr = schur_complement(&sp, RankTol::default()).unwrap();
        assert_eq!(sr.s, sigma);
        let om = sb_inverse(&sp, &sr, ROW_SPACE_TOL).unwrap();
        let inv = sigma.try_inverse().unwrap();
        assert!((om.omega - inv).abs().max() < 1e-12);
    }

    #[test]
    fn sb_inverse_rejects_row_space_defect() {
        // Σ_𝓑 = 0 but the cross block is not: impossible for a covariance
        let sigma = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        let sp = SigmaPartition::new(sigma, labels(1, 1, 0)).unwrap();
        let sr = schur_complement(&sp, RankTol::default()).unwrap();
        assert!(sr.residual > 0.5);
        assert!(matches!(sb_inverse(&sp, &sr, ROW_SPACE_TOL), Err(Error::RowSpaceDefect { .. })));
    }
}
