//! Assembles the interaction covariance over `(𝓑, 𝓛, 𝓡)` and decides
//! conditional independence through three equivalent routes: the
//! conditional-expectation representation, the block factorization / Schur
//! complement sparsity, and separation in the graph read off `Ω`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bitgroup::{build_index_sets, span_generate_in, IndexSets, Mask, MaskSpan};
use crate::distribution::{interaction_cov_from_moments, MomentVector, Pmf};
use crate::error::{Error, Result};
use crate::graph;
use crate::hadamard;
use crate::schur::{self, RankTol, SigmaPartition, ROW_SPACE_TOL};

/// Default sparsity tolerance for exact pmfs.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Three lists of generator masks defining derived binary vectors `A`, `B`,
/// `C` over a base vector `X ∈ {±1}^p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionFile", into = "PartitionFile")]
pub struct Partition {
    p: usize,
    a: Vec<Mask>,
    b: Vec<Mask>,
    c: Vec<Mask>,
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    p: usize,
    #[serde(rename = "A")]
    a: Vec<Mask>,
    #[serde(rename = "B")]
    b: Vec<Mask>,
    #[serde(rename = "C")]
    c: Vec<Mask>,
}

impl TryFrom<PartitionFile> for Partition {
    type Error = Error;

    fn try_from(f: PartitionFile) -> Result<Self> {
        Partition::new(f.p, f.a, f.b, f.c)
    }
}

impl From<Partition> for PartitionFile {
    fn from(p: Partition) -> Self {
        PartitionFile { p: p.p, a: p.a, b: p.b, c: p.c }
    }
}

impl Partition {
    pub fn new(p: usize, a: Vec<Mask>, b: Vec<Mask>, c: Vec<Mask>) -> Result<Self> {
        if p > crate::MAX_WIDTH {
            return Err(Error::WidthTooLarge(p));
        }
        for m in a.iter().chain(&b).chain(&c) {
            if m.width() != p {
                return Err(Error::InvalidPartition(format!("mask {m} does not have width {p}")));
            }
            if m.is_zero() {
                return Err(Error::InvalidPartition("generator masks must be nonzero".into()));
            }
        }
        if a.is_empty() && b.is_empty() && c.is_empty() {
            return Err(Error::InvalidPartition("partition has no generators".into()));
        }
        Ok(Self { p, a, b, c })
    }

    pub fn from_strs(p: usize, a: &[&str], b: &[&str], c: &[&str]) -> Result<Self> {
        let parse = |xs: &[&str]| xs.iter().map(|s| s.parse::<Mask>()).collect::<Result<Vec<_>>>();
        Self::new(p, parse(a)?, parse(b)?, parse(c)?)
    }

    /// Coordinate blocks `A = X_1..X_r`, `B = X_{r+1}..X_{r+s}`, `C` the rest.
    pub fn contiguous(r: usize, s: usize, t: usize) -> Result<Self> {
        let p = r + s + t;
        let coords = |range: std::ops::Range<usize>| range.map(|j| Mask::coordinate(j, p)).collect::<Result<Vec<_>>>();
        Self::new(p, coords(0..r)?, coords(r..r + s)?, coords(r + s..p)?)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn a_gens(&self) -> &[Mask] {
        &self.a
    }

    pub fn b_gens(&self) -> &[Mask] {
        &self.b
    }

    pub fn c_gens(&self) -> &[Mask] {
        &self.c
    }

    /// Same partition with `A` and `C` exchanged.
    pub fn swapped(&self) -> Self {
        Self { p: self.p, a: self.c.clone(), b: self.b.clone(), c: self.a.clone() }
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }

    /// Display names for base coordinates. A coordinate that is itself a
    /// generator is named after its block (`A1`, `B2`, `C1`); others are `X{j}`.
    pub fn coordinate_names(&self) -> Vec<String> {
        (0..self.p)
            .map(|j| {
                let single = Mask::coordinate(j, self.p).expect("in range");
                for (name, gens) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
                    if let Some(i) = gens.iter().position(|&g| g == single) {
                        return format!("{name}{}", i + 1);
                    }
                }
                format!("X{}", j + 1)
            })
            .collect()
    }
}

/// Index of the derived value tuple of `gens` at `cell`; bit `i` (first
/// generator most significant) is set iff that generator equals `-1`.
pub fn derived_index(gens: &[Mask], cell: usize) -> usize {
    gens.iter()
        .fold(0usize, |acc, g| (acc << 1) | ((g.bits() as usize & cell).count_ones() as usize & 1))
}

/// Conditional expectation of `X_target` given the derived vector `gens`,
/// evaluated at every cell (`NaN` on cells whose conditioning value has
/// probability zero).
fn conditional_expectation(pmf: &Pmf, target: Mask, gens: &[Mask]) -> Vec<f64> {
    let n = pmf.probs().len();
    let mut mass = std::collections::HashMap::<usize, (f64, f64)>::new();
    let keys: Vec<usize> = (0..n).map(|cell| derived_index(gens, cell)).collect();
    for cell in 0..n {
        let pr = pmf.prob(cell);
        if pr > 0.0 {
            let e = mass.entry(keys[cell]).or_insert((0.0, 0.0));
            e.0 += pr * target.sign_at(cell);
            e.1 += pr;
        }
    }
    keys.iter()
        .map(|k| mass.get(k).map_or(f64::NAN, |&(num, den)| num / den))
        .collect()
}

/// Number of distinct values of the derived vector `gens` with positive
/// probability.
pub fn support_of(pmf: &Pmf, gens: &[Mask]) -> usize {
    let mut seen: Vec<usize> = pmf.support().into_iter().map(|c| derived_index(gens, c)).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

pub fn assemble_sigma(pmf: &Pmf, part: &Partition) -> Result<SigmaPartition> {
    let m = pmf.moments();
    assemble_sigma_with(&m, pmf.p(), part)
}

fn assemble_sigma_with(m: &MomentVector, p: usize, part: &Partition) -> Result<SigmaPartition> {
    if p != part.p() {
        return Err(Error::WidthMismatch(p, part.p()));
    }
    let labels = build_index_sets(part)?;
    let order = labels.ordered();
    let sigma = interaction_cov_from_moments(m, &order, &order);
    SigmaPartition::new(sigma, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    /// Conditional expectations depend on `B` only.
    pub belief: bool,
    /// `Σ[𝓛,𝓡] = M_1 Σ_𝓑 M_2ᵀ`.
    pub factorization: bool,
    /// `S[𝓛,𝓡] = 0`.
    pub schur: bool,
    /// `𝓑` separates `𝓛` from `𝓡` in the graph of `Ω`.
    pub separation: bool,
}

impl Criteria {
    pub fn all_equal(&self) -> bool {
        let v = [self.belief, self.factorization, self.schur, self.separation];
        v.iter().all(|&x| x == v[0])
    }
}

/// Outcome of [`test_ci`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiVerdict {
    pub is_ci: bool,
    #[serde(rename = "max_offblock_S")]
    pub max_offblock_s: f64,
    #[serde(rename = "max_offblock_Omega")]
    pub max_offblock_omega: f64,
    pub belief_residual: f64,
    pub factorization_residual: f64,
    pub rank_b: usize,
    pub support_b: usize,
    pub tol: f64,
    pub criteria: Criteria,
    pub row_space_residual: f64,
    pub reflexive_residual: f64,
    pub wings_overlap: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<bool>,
}

impl CiVerdict {
    /// Agreement of criterion (b), the covariance criteria (c)/(d), and graph
    /// separation.
    pub fn criterion_agreement(&self) -> [bool; 3] {
        let c = &self.criteria;
        [c.belief, c.schur && c.factorization, c.separation]
    }

    /// Every magnitude is at least a factor 10 away from the tolerance.
    pub fn unambiguous(&self) -> bool {
        [self.max_offblock_s, self.max_offblock_omega, self.belief_residual, self.factorization_residual]
            .iter()
            .all(|&v| v <= self.tol / 10.0 || v >= self.tol * 10.0)
    }
}

/// Which wing a belief target belongs to; selects the extra conditioning
/// vector (`C` for the left wing, `A` for the right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefCoefficients {
    pub target: Mask,
    /// Elements of `⟨B⟩` in basis-coordinate order; `masks[0]` is the constant.
    pub masks: Vec<Mask>,
    pub alpha: Vec<f64>,
    /// `max |E[target | B, other] - αᵀ B^⊗|` over the support.
    pub residual: f64,
    /// `max |E[target | B] - αᵀ B^⊗|` over the support.
    pub fit_residual: f64,
}

impl BeliefCoefficients {
    pub fn fitted(&self, cell: usize) -> f64 {
        self.masks.iter().zip(&self.alpha).map(|(m, a)| a * m.sign_at(cell)).sum()
    }
}

pub fn belief_coefficients(pmf: &Pmf, part: &Partition, target: Mask, side: Side) -> Result<BeliefCoefficients> {
    belief_with(pmf, &pmf.moments(), part, target, side)
}

fn belief_with(pmf: &Pmf, m: &MomentVector, part: &Partition, target: Mask, side: Side) -> Result<BeliefCoefficients> {
    let p = part.p();
    let span_b = span_generate_in(part.b_gens(), p)?;
    let (own, other) = match side {
        Side::Left => (part.a_gens(), part.c_gens()),
        Side::Right => (part.c_gens(), part.a_gens()),
    };
    let own_span = span_generate_in(own, p)?.sum(&span_b)?;
    if !own_span.contains(target) {
        return Err(Error::InvalidPartition(format!("target {target} is not generated by its wing and B")));
    }
    let (masks, alpha) = solve_belief(m, &span_b, target)?;

    let fitted = |cell: usize| -> f64 { masks.iter().zip(&alpha).map(|(mk, a)| a * mk.sign_at(cell)).sum() };
    let mut extended: Vec<Mask> = part.b_gens().to_vec();
    extended.extend_from_slice(other);
    let given_b = conditional_expectation(pmf, target, part.b_gens());
    let given_ext = conditional_expectation(pmf, target, &extended);
    let mut residual = 0.0f64;
    let mut fit_residual = 0.0f64;
    for cell in pmf.support() {
        let f = fitted(cell);
        residual = residual.max((given_ext[cell] - f).abs());
        fit_residual = fit_residual.max((given_b[cell] - f).abs());
    }
    Ok(BeliefCoefficients { target, masks, alpha, residual, fit_residual })
}

/// Canonical coefficients `α = η(m_B)⁺ E[X_target B^⊗]`, where the Gram
/// matrix of the power vector of `⟨B⟩` is the prism of its moment vector.
fn solve_belief(m: &MomentVector, span_b: &MaskSpan, target: Mask) -> Result<(Vec<Mask>, Vec<f64>)> {
    let masks = span_b.elements_by_coordinates();
    let m_b: Vec<f64> = masks.iter().map(|&mk| m.get(mk)).collect();
    let gram = hadamard::prism(&m_b)?.to_dense()?;
    let rhs = nalgebra::DVector::from_iterator(
        masks.len(),
        masks.iter().map(|&mk| m.0[(mk.bits() ^ target.bits()) as usize]),
    );
    let (gram_pinv, _) = schur::pinv_sym(&gram, RankTol::default())?;
    let alpha = (gram_pinv * rhs).iter().copied().collect();
    Ok((masks, alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFactorization {
    pub holds: bool,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    /// `max |Σ[𝓛,𝓡] - M_1 Σ_𝓑 M_2ᵀ|`.
    pub residual: f64,
}

pub fn verify_block_factorization(pmf: &Pmf, part: &Partition, tol: f64) -> Result<BlockFactorization> {
    let sp = assemble_sigma(pmf, part)?;
    factorization_of(&sp, RankTol::default(), tol)
}

fn factorization_of(sp: &SigmaPartition, rank_tol: RankTol, tol: f64) -> Result<BlockFactorization> {
    let (b, l, r) = (sp.n_center(), sp.n_left(), sp.n_right());
    let center = sp.center();
    let (center_pinv, _) = schur::pinv_sym(&center, rank_tol)?;
    let m1 = sp.sigma.view((b, 0), (l, b)) * &center_pinv;
    let m2 = sp.sigma.view((b + l, 0), (r, b)) * &center_pinv;
    let lr = sp.sigma.view((b, b + l), (l, r));
    let residual = (lr - &m1 * &center * m2.transpose()).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(BlockFactorization { holds: residual <= tol, m1, m2, residual })
}

pub fn test_ci(pmf: &Pmf, part: &Partition, tol: f64) -> Result<CiVerdict> {
    test_ci_with(pmf, part, tol, RankTol::default())
}

pub fn test_ci_with(pmf: &Pmf, part: &Partition, tol: f64, rank_tol: RankTol) -> Result<CiVerdict> {
    let m = pmf.moments();
    let sp = assemble_sigma_with(&m, pmf.p(), part)?;
    let sr = schur::schur_complement(&sp, rank_tol)?;
    let omega = schur::sb_inverse(&sp, &sr, ROW_SPACE_TOL)?;
    let fact = factorization_of(&sp, rank_tol, tol)?;
    let g = graph::build_graph(&omega, &sp.labels, tol, &part.coordinate_names())?;

    let mut belief_residual = 0.0f64;
    for (side, gens) in [(Side::Left, part.a_gens()), (Side::Right, part.c_gens())] {
        let span = span_generate_in(gens, part.p())?;
        for target in span.elements().into_iter().filter(|t| !t.is_zero()) {
            let bc = belief_with(pmf, &m, part, target, side)?;
            belief_residual = belief_residual.max(bc.residual);
        }
    }

    let max_offblock_s = sr.max_offblock();
    let max_offblock_omega = omega.max_offblock();
    let criteria = Criteria {
        belief: belief_residual <= tol,
        factorization: fact.holds,
        schur: max_offblock_s <= tol,
        separation: graph::separates(&g),
    };
    Ok(CiVerdict {
        is_ci: criteria.schur,
        max_offblock_s,
        max_offblock_omega,
        belief_residual,
        factorization_residual: fact.residual,
        rank_b: sr.rank_b,
        support_b: support_of(pmf, part.b_gens()),
        tol,
        criteria,
        row_space_residual: sr.residual,
        reflexive_residual: omega.reflexive_residual,
        wings_overlap: sp.labels.wings_overlap,
        empirical: None,
    })
}

/// `max |S[𝓛,𝓡]|` when the center `𝓑` is replaced by an arbitrary list of
/// interactions. Used to probe what happens with a proper subset of `⟨B⟩`.
pub fn offblock_with_center(pmf: &Pmf, part: &Partition, center: &[Mask], rank_tol: RankTol) -> Result<f64> {
    let full = build_index_sets(part)?;
    let labels = IndexSets { center: center.to_vec(), ..full };
    let order = labels.ordered();
    let sigma = interaction_cov_from_moments(&pmf.moments(), &order, &order);
    let sp = SigmaPartition::new(sigma, labels)?;
    Ok(schur::schur_complement(&sp, rank_tol)?.max_offblock())
}

/// Tests `(A_1..A_{j-1}) ⟂ (A_{j+1}..A_k) | A_j` for every interior `j`.
pub fn scan_markov_chain(pmf: &Pmf, k: usize, tol: f64) -> Result<Vec<CiVerdict>> {
    if k < 3 {
        return Err(Error::InvalidPartition(format!("chain length {k} < 3")));
    }
    if pmf.p() != k {
        return Err(Error::WidthMismatch(pmf.p(), k));
    }
    (1..k - 1)
        .map(|j| test_ci(pmf, &Partition::contiguous(j, 1, k - 1 - j)?, tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{make_ci_pmf, make_ising_cycle_pmf, CiPmfConfig};

    fn m(s: &str) -> Mask {
        s.parse().unwrap()
    }

    fn xor_pmf() -> Pmf {
        let mut probs = vec![0.0; 8];
        for a in 0..2 {
            for c in 0..2 {
                probs[(a << 2) | ((a ^ c) << 1) | c] = 0.25;
            }
        }
        Pmf::new(3, probs).unwrap()
    }

    fn ci_example() -> Pmf {
        let mut probs = vec![0.0; 8];
        for cell in 0..8usize {
            let (a, b, c) = ((cell >> 2) & 1, (cell >> 1) & 1, cell & 1);
            let pa = if a == b { 0.75 } else { 0.25 };
            let pc = if c == b { 0.75 } else { 0.25 };
            probs[cell] = 0.5 * pa * pc;
        }
        Pmf::new(3, probs).unwrap()
    }

    fn abc() -> Partition {
        Partition::contiguous(1, 1, 1).unwrap()
    }

    #[test]
    fn partition_json_format() {
        let p: Partition = serde_json::from_str(r#"{"p":3,"A":["100"],"B":["010"],"C":["001"]}"#).unwrap();
        assert_eq!(p, abc());
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"p":3,"A":["100"],"B":["010"],"C":["001"]}"#);
        assert!(serde_json::from_str::<Partition>(r#"{"p":3,"A":["000"],"B":[],"C":["001"]}"#).is_err());
        assert!(serde_json::from_str::<Partition>(r#"{"p":3,"A":["10"],"B":[],"C":["001"]}"#).is_err());
        assert!(serde_json::from_str::<Partition>(r#"{"p":3,"A":[],"B":[],"C":[]}"#).is_err());
    }

    #[test]
    fn coordinate_names_follow_blocks() {
        assert_eq!(Partition::contiguous(2, 1, 1).unwrap().coordinate_names(), ["A1", "A2", "B1", "C1"]);
        let p = Partition::from_strs(3, &["100"], &["110"], &["001"]).unwrap();
        assert_eq!(p.coordinate_names(), ["A1", "X2", "C1"]);
    }

    #[test]
    fn sigma_layout_three_variables() {
        let sp = assemble_sigma(&ci_example(), &abc()).unwrap();
        assert_eq!(sp.dim(), 5);
        assert_eq!(sp.labels.ordered(), vec![m("010"), m("100"), m("110"), m("001"), m("011")]);
        let point = Pmf::point_mass(3, 5).unwrap();
        assert_eq!(assemble_sigma(&point, &abc()).unwrap().sigma, DMatrix::zeros(5, 5));
        let xor = assemble_sigma(&xor_pmf(), &abc()).unwrap();
        // rows: B, A, AB, C, BC; AB ≡ C
        assert_eq!(xor.sigma[(2, 3)], 1.0);
    }

    #[test]
    fn ci_example_verdict() {
        let v = test_ci(&ci_example(), &abc(), DEFAULT_TOL).unwrap();
        assert!(v.is_ci);
        assert!(v.criteria.all_equal());
        assert!(v.max_offblock_s <= 1e-12);
        assert!(v.max_offblock_omega <= 1e-10);
        assert_eq!((v.rank_b, v.support_b), (1, 2));
    }

    #[test]
    fn xor_verdict() {
        let v = test_ci(&xor_pmf(), &abc(), DEFAULT_TOL).unwrap();
        assert!(!v.is_ci);
        assert!(v.criteria.all_equal());
        assert!((v.max_offblock_s - 1.0).abs() < 1e-12);
        assert!(v.belief_residual > 0.4);
    }

    #[test]
    fn generated_ci_pmfs_pass() {
        for seed in 0..20 {
            let cfg = CiPmfConfig::new(2, 1, 2).with_zeros(if seed % 2 == 0 { 0.0 } else { 0.3 });
            let v = test_ci(&make_ci_pmf(&cfg, seed).unwrap(), &Partition::contiguous(2, 1, 2).unwrap(), DEFAULT_TOL)
                .unwrap();
            assert!(v.is_ci && v.criteria.all_equal(), "seed {seed}: {v:?}");
        }
    }

    #[test]
    fn ising_cycle_molecule() {
        let pmf = make_ising_cycle_pmf([0.8, -0.4, 1.1, 0.5]).unwrap();
        let part = Partition::from_strs(4, &["1000"], &["0100", "0001"], &["0010"]).unwrap();
        let v = test_ci(&pmf, &part, DEFAULT_TOL).unwrap();
        assert!(v.is_ci && v.criteria.all_equal(), "{v:?}");
    }

    #[test]
    fn belief_examples() {
        let part = abc();
        let bc = belief_coefficients(&ci_example(), &part, m("010"), Side::Left).unwrap();
        assert_eq!(bc.masks, vec![m("000"), m("010")]);
        assert!((bc.alpha[0]).abs() < 1e-15 && (bc.alpha[1] - 1.0).abs() < 1e-15);
        assert!(bc.residual < 1e-15);

        let bc = belief_coefficients(&ci_example(), &part, m("100"), Side::Left).unwrap();
        assert!(bc.alpha[0].abs() < 1e-15 && (bc.alpha[1] - 0.5).abs() < 1e-15);
        assert!(bc.residual < 1e-15 && bc.fit_residual < 1e-15);

        let bc = belief_coefficients(&xor_pmf(), &part, m("100"), Side::Left).unwrap();
        assert!(bc.residual > 0.4);

        assert!(belief_coefficients(&xor_pmf(), &part, m("001"), Side::Left).is_err());
    }

    #[test]
    fn block_factorization_examples() {
        let f = verify_block_factorization(&ci_example(), &abc(), DEFAULT_TOL).unwrap();
        assert!(f.holds);
        // Σ[A, C] = 1/4 = M1[A,B] Σ_B M2[C,B] = (1/2)(1)(1/2)
        assert!((f.m1[(0, 0)] - 0.5).abs() < 1e-15 && (f.m2[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(!verify_block_factorization(&xor_pmf(), &abc(), DEFAULT_TOL).unwrap().holds);

        // empty center: plain uncorrelatedness of the wings
        let part = Partition::contiguous(1, 0, 1).unwrap();
        let f = verify_block_factorization(&Pmf::uniform(2).unwrap(), &part, DEFAULT_TOL).unwrap();
        assert!(f.holds && f.m1.ncols() == 0);
    }

    #[test]
    fn markov_scan_edges() {
        let pmf = Pmf::uniform(4).unwrap();
        assert!(scan_markov_chain(&pmf, 4, DEFAULT_TOL).unwrap().iter().all(|v| v.is_ci));
        assert!(scan_markov_chain(&Pmf::uniform(2).unwrap(), 2, DEFAULT_TOL).is_err());
        assert!(scan_markov_chain(&pmf, 3, DEFAULT_TOL).is_err());
    }

    #[test]
    fn empty_wing_is_trivially_ci() {
        // A generated inside ⟨B⟩
        let part = Partition::from_strs(2, &["10"], &["10"], &["01"]).unwrap();
        let v = test_ci(&make_ci_pmf(&CiPmfConfig::new(1, 0, 1), 2).unwrap(), &part, DEFAULT_TOL).unwrap();
        assert!(v.is_ci && v.criteria.all_equal());
    }
}
