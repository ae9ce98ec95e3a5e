//! Brute-force ground truth by definitional summation over cells.
//!
//! Nothing here goes through the fast transform or a pseudoinverse, so a
//! disagreement with the engine localizes to one side.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitgroup::Mask;
use crate::distribution::{make_ci_pmf, CiPmfConfig, Pmf};
use crate::engine::{derived_index, offblock_with_center, Partition};
use crate::error::{Error, Result};
use crate::schur::RankTol;

/// Largest width accepted by the quadratic-cost oracles.
pub const ORACLE_MAX_WIDTH: usize = 10;

/// Deviation threshold separating exact zeros from genuine dependence.
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub is_ci: bool,
    /// Derived `(a, b, c)` value indices of the worst cell, if any cell was checked.
    pub worst_cell: Option<(usize, usize, usize)>,
    /// `max |P(a,c|b) - P(a|b) P(c|b)|` over `b` with `P(b) > 0`.
    pub deviation: f64,
}

pub fn oracle_ci(pmf: &Pmf, part: &Partition) -> Result<OracleReport> {
    if pmf.p() != part.p() {
        return Err(Error::WidthMismatch(pmf.p(), part.p()));
    }
    let mut joint: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for cell in 0..pmf.probs().len() {
        let pr = pmf.prob(cell);
        if pr > 0.0 {
            let key = (
                derived_index(part.a_gens(), cell),
                derived_index(part.b_gens(), cell),
                derived_index(part.c_gens(), cell),
            );
            *joint.entry(key).or_insert(0.0) += pr;
        }
    }
    let mut p_b: BTreeMap<usize, f64> = BTreeMap::new();
    let mut p_ab: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut p_bc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(a, b, c), &pr) in &joint {
        *p_b.entry(b).or_insert(0.0) += pr;
        *p_ab.entry((a, b)).or_insert(0.0) += pr;
        *p_bc.entry((b, c)).or_insert(0.0) += pr;
    }
    let mut deviation = 0.0f64;
    let mut worst_cell = None;
    for (&b, &pb) in &p_b {
        let a_vals: Vec<(usize, f64)> =
            p_ab.iter().filter(|((_, bb), _)| *bb == b).map(|(&(a, _), &v)| (a, v)).collect();
        let c_vals: Vec<(usize, f64)> = p_bc.range((b, 0)..(b + 1, 0)).map(|(&(_, c), &v)| (c, v)).collect();
        for &(a, pab) in &a_vals {
            for &(c, pbc) in &c_vals {
                let pabc = joint.get(&(a, b, c)).copied().unwrap_or(0.0);
                let dev = (pabc / pb - (pab / pb) * (pbc / pb)).abs();
                if worst_cell.is_none() || dev > deviation {
                    deviation = dev;
                    worst_cell = Some((a, b, c));
                }
            }
        }
    }
    Ok(OracleReport { is_ci: deviation <= ORACLE_TOL, worst_cell, deviation })
}

fn check_width(pmf: &Pmf) -> Result<()> {
    if pmf.p() > ORACLE_MAX_WIDTH {
        return Err(Error::LimitExceeded(format!("oracle limited to p <= {ORACLE_MAX_WIDTH}, got {}", pmf.p())));
    }
    Ok(())
}

fn sign(mask_bits: usize, cell: usize) -> f64 {
    if (mask_bits & cell).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `E[X^⊗ (X^⊗)ᵀ]` summed cell by cell.
pub fn oracle_second_moment(pmf: &Pmf) -> Result<DMatrix<f64>> {
    check_width(pmf)?;
    let n = pmf.probs().len();
    let mut out = DMatrix::zeros(n, n);
    for cell in 0..n {
        let pr = pmf.prob(cell);
        if pr == 0.0 {
            continue;
        }
        for i in 0..n {
            let si = sign(i, cell);
            for j in 0..n {
                out[(i, j)] += pr * si * sign(j, cell);
            }
        }
    }
    Ok(out)
}

fn expectation(pmf: &Pmf, f: impl Fn(usize) -> f64) -> f64 {
    pmf.probs().iter().enumerate().map(|(cell, &pr)| pr * f(cell)).sum()
}

/// `Cov(X_r, X_c)` from definitional expectations.
pub fn oracle_interaction_cov(pmf: &Pmf, rows: &[Mask], cols: &[Mask]) -> Result<DMatrix<f64>> {
    check_width(pmf)?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let (r, c) = (rows[i].bits() as usize, cols[j].bits() as usize);
        let er = expectation(pmf, |cell| sign(r, cell));
        let ec = expectation(pmf, |cell| sign(c, cell));
        let erc = expectation(pmf, |cell| sign(r, cell) * sign(c, cell));
        erc - er * ec
    }))
}

/// Covariance of all `2^p - 1` nonconstant interactions.
pub fn oracle_full_cov(pmf: &Pmf) -> Result<DMatrix<f64>> {
    let p = pmf.p();
    let masks: Vec<Mask> = (1..1u32 << p).map(|b| Mask::new(b, p).expect("fits")).collect();
    oracle_interaction_cov(pmf, &masks, &masks)
}

/// `E[X_target | X_g, g ∈ given]` keyed by the `±1` values of the
/// conditioning interactions, over configurations with positive probability.
pub fn oracle_cond_expectation(pmf: &Pmf, target: Mask, given: &[Mask]) -> Result<BTreeMap<Vec<i8>, f64>> {
    check_width(pmf)?;
    let mut acc: BTreeMap<Vec<i8>, (f64, f64)> = BTreeMap::new();
    for cell in pmf.support() {
        let key: Vec<i8> = given.iter().map(|g| sign(g.bits() as usize, cell) as i8).collect();
        let e = acc.entry(key).or_insert((0.0, 0.0));
        e.0 += pmf.prob(cell) * sign(target.bits() as usize, cell);
        e.1 += pmf.prob(cell);
    }
    Ok(acc.into_iter().map(|(k, (num, den))| (k, num / den)).collect())
}

/// A pmf on which the Schur-complement sparsity computed with a proper
/// subset of `⟨B⟩ \ {1}` as the center disagrees with the CI oracle.
#[derive(Debug, Clone)]
pub struct SubsetCounterexample {
    pub pmf: Pmf,
    pub partition: Partition,
    pub center: Vec<Mask>,
    pub oracle_is_ci: bool,
    pub offblock: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SubsetSearch {
    /// Sparse with the reduced center although CI fails.
    pub sparse_not_ci: Option<SubsetCounterexample>,
    /// CI holds although the reduced center leaves a nonzero off-block.
    pub ci_not_sparse: Option<SubsetCounterexample>,
}

/// Randomized search for both failure directions when the center is shrunk
/// to a proper subset of `⟨B⟩ \ {1}`.
///
/// Candidates are CI-constructed pmfs and pmfs uniform on a random subset of
/// cells (which make exact covariance cancellations likely), for
/// `r = t = 1` and `s ∈ {1, 2}` with reduced centers `∅` and `{B1, B2}`.
pub fn subset_counterexample_search(seed: u64, trials: usize, tol: f64) -> Result<SubsetSearch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SubsetSearch::default();
    for trial in 0..trials {
        let s = 1 + trial % 2;
        let p = s + 2;
        let part = Partition::contiguous(1, s, 1)?;
        let center: Vec<Mask> = if s == 1 { Vec::new() } else { part.b_gens().to_vec() };
        let pmf = if trial % 4 < 2 {
            make_ci_pmf(&CiPmfConfig::new(1, s, 1), seed.wrapping_add(trial as u64))?
        } else {
            let mut cells: Vec<usize> = (0..1usize << p).collect();
            cells.shuffle(&mut rng);
            let k = 2 + trial % ((1 << p) - 2);
            let mut w = vec![0.0; 1 << p];
            for &c in &cells[..k] {
                w[c] = 1.0;
            }
            Pmf::from_weights(p, w)?
        };
        let oracle = oracle_ci(&pmf, &part)?;
        let offblock = offblock_with_center(&pmf, &part, &center, RankTol::default())?;
        let sparse = offblock <= tol;
        let found = SubsetCounterexample {
            pmf,
            partition: part,
            center,
            oracle_is_ci: oracle.is_ci,
            offblock,
        };
        if sparse && !oracle.is_ci && out.sparse_not_ci.is_none() {
            out.sparse_not_ci = Some(found);
        } else if !sparse && oracle.is_ci && out.ci_not_sparse.is_none() {
            out.ci_not_sparse = Some(found);
        }
        if out.sparse_not_ci.is_some() && out.ci_not_sparse.is_some() {
            break;
        }
    }
    Ok(out)
}
