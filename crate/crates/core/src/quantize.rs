//! Dyadic quantization of `[-1, 1]`-valued vectors `(U, V, W)`, quantized
//! conditional-independence scans, and the discrepancy `Δ_d` between the
//! quantized σ-fields together with its Hölder-rate bound.
//!
//! A depth-`d` cell of a coordinate is indexed by `k ∈ 0..2^d`, covering
//! `[-1 + k 2^{1-d}, -1 + (k+1) 2^{1-d})` (the last cell is closed). Its
//! binary digits `c_1..c_d` give the expansion bits `A_i = 2 c_i - 1`, so in
//! the pmf cell convention (set bit ↔ `-1`) the coordinate contributes the
//! complement of `k`.

use serde::{Deserialize, Serialize};

use crate::distribution::Pmf;
use crate::engine::{test_ci, CiVerdict, Partition};
use crate::error::{Error, Result};
use crate::MAX_WIDTH;

/// Atom-count limit per side for the rectangle tier.
pub const RECT_MAX_ATOMS: usize = 4096;
/// Atom-count limit per side for exhaustive event enumeration.
pub const EXACT_MAX_ATOMS: usize = 12;

/// Cell index of `x` at depth `d`; `x = 1` falls in the top cell.
pub fn cell_index(x: f64, d: u32) -> Result<usize> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::OutOfRange(x));
    }
    let top = (1usize << d) - 1;
    let k = ((x + 1.0) * (1u64 << (d - 1)) as f64).floor() as usize;
    Ok(k.min(top))
}

/// The dyadic quantizer `Q_d(x) = -1 + 2^{-d} + 2^{1-d} ⌊2^{d-1}(x+1)⌋`,
/// with `x = 1` mapped to the top cell center.
pub fn quantize_value(x: f64, d: u32) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidSource("depth must be at least 1".into()));
    }
    let k = cell_index(x, d)?;
    Ok(cell_center(k, d))
}

pub fn cell_center(k: usize, d: u32) -> f64 {
    -1.0 + 0.5f64.powi(d as i32) + (k as f64) * 0.5f64.powi(d as i32 - 1)
}

/// The `±1` expansion bits `A_1..A_d` of the depth-`d` cell `k`, so that
/// `Q_d = Σ A_i / 2^i`.
pub fn expansion_bits(k: usize, d: u32) -> Vec<i8> {
    (0..d).map(|i| if (k >> (d - 1 - i)) & 1 == 1 { 1 } else { -1 }).collect()
}

fn interval(k: usize, d: u32) -> (f64, f64) {
    let w = 0.5f64.powi(d as i32 - 1);
    (-1.0 + k as f64 * w, -1.0 + (k + 1) as f64 * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub d: u32,
    pub r: usize,
    pub s: usize,
    pub t: usize,
}

impl QuantConfig {
    pub fn new(d: u32, r: usize, s: usize, t: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSource("depth must be at least 1".into()));
        }
        let bits = d as usize * (r + s + t);
        if bits > MAX_WIDTH {
            return Err(Error::WidthTooLarge(bits));
        }
        Ok(Self { d, r, s, t })
    }

    pub fn width(&self) -> usize {
        self.d as usize * (self.r + self.s + self.t)
    }

    /// Partition grouping `U`-bits | `V`-bits | `W`-bits.
    pub fn partition(&self) -> Result<Partition> {
        let d = self.d as usize;
        Partition::contiguous(d * self.r, d * self.s, d * self.t)
    }

    fn atoms(&self, dims: usize) -> usize {
        1 << (self.d as usize * dims)
    }
}

/// Quantized joint law `p(i, j, k)` over `U`-atoms `i`, `V`-atoms `j` and
/// `W`-atoms `k` (natural cell order, first coordinate most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedJoint {
    pub cfg: QuantConfig,
    probs: Vec<f64>,
}

impl QuantizedJoint {
    fn shape(&self) -> (usize, usize, usize) {
        (self.cfg.atoms(self.cfg.r), self.cfg.atoms(self.cfg.s), self.cfg.atoms(self.cfg.t))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, nv, nw) = self.shape();
        self.probs[(i * nv + j) * nw + k]
    }

    /// Pmf over the `d (r+s+t)` expansion bits.
    pub fn to_pmf(&self) -> Result<Pmf> {
        let (nu, nv, nw) = self.shape();
        let d = self.cfg.d as usize;
        let (bu, bv, bw) = (d * self.cfg.r, d * self.cfg.s, d * self.cfg.t);
        let mut weights = vec![0.0; 1 << (bu + bv + bw)];
        for i in 0..nu {
            for j in 0..nv {
                for k in 0..nw {
                    let cell = ((i ^ (nu - 1)) << (bv + bw)) | ((j ^ (nv - 1)) << bw) | (k ^ (nw - 1));
                    weights[cell] = self.get(i, j, k);
                }
            }
        }
        Pmf::from_weights(bu + bv + bw, weights)
    }
}

fn natural_index(row: &[f64], d: u32) -> Result<usize> {
    row.iter().try_fold(0usize, |acc, &x| Ok((acc << d) | cell_index(x, d)?))
}

/// Empirical quantized law of `n` observations of `(U, V, W)`.
pub fn quantized_joint_from_data(data: &[Vec<f64>], cfg: QuantConfig) -> Result<QuantizedJoint> {
    if data.is_empty() {
        return Err(Error::InvalidSamples("no observations".into()));
    }
    let (r, s, t) = (cfg.r, cfg.s, cfg.t);
    let (_, nv, nw) = (cfg.atoms(r), cfg.atoms(s), cfg.atoms(t));
    let mut probs = vec![0.0; 1 << cfg.width()];
    let weight = 1.0 / data.len() as f64;
    for row in data {
        if row.len() != r + s + t {
            return Err(Error::InvalidSamples(format!("row has {} entries, expected {}", row.len(), r + s + t)));
        }
        let i = natural_index(&row[..r], cfg.d)?;
        let j = natural_index(&row[r..r + s], cfg.d)?;
        let k = natural_index(&row[r + s..], cfg.d)?;
        probs[(i * nv + j) * nw + k] += weight;
    }
    Ok(QuantizedJoint { cfg, probs })
}

pub fn quantized_pmf_from_data(data: &[Vec<f64>], cfg: QuantConfig) -> Result<Pmf> {
    quantized_joint_from_data(data, cfg)?.to_pmf()
}

/// Law of `V`: piecewise constant on the depth-`depth` dyadic grid of
/// `[-1,1]^s`, with `weights[j]` the mass of grid atom `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLaw {
    pub depth: u32,
    pub weights: Vec<f64>,
}

impl Default for GridLaw {
    fn default() -> Self {
        Self { depth: 0, weights: vec![1.0] }
    }
}

/// Conditional law of `U` (or `W`) given `V = v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CondLaw {
    /// For each atom of the `V` grid, a pmf over the depth-`depth` grid atoms
    /// of this block; uniform within atoms.
    Table { depth: u32, tables: Vec<Vec<f64>> },
    /// Independent coordinates with density `(1 + β_i(v) u) / 2` on `[-1,1]`,
    /// `β_i(v) = intercept[i] + slope[i] · v`.
    Linear { intercept: Vec<f64>, slope: Vec<Vec<f64>> },
    /// `W = U` (right block only).
    CopyU,
}

/// An analytic `(U, V, W)` law whose quantizations are computed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub r: usize,
    pub s: usize,
    pub t: usize,
    #[serde(default)]
    pub v: GridLaw,
    pub u: CondLaw,
    pub w: CondLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_w: Option<f64>,
}

/// Hölder exponent and constants `(α, L_U, L_W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderConstants {
    pub alpha: f64,
    pub l_u: f64,
    pub l_w: f64,
}

impl Source {
    pub fn from_json(text: &str) -> Result<Self> {
        let src: Source = serde_json::from_str(text)?;
        src.validate()?;
        Ok(src)
    }

    pub fn from_json_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSource(msg));
        let nv = 1usize << (self.v.depth as usize * self.s);
        if self.v.weights.len() != nv {
            return bad(format!("V grid needs {nv} weights, got {}", self.v.weights.len()));
        }
        check_distribution(&self.v.weights, "V weights")?;
        if matches!(self.u, CondLaw::CopyU) {
            return bad("U cannot copy itself".into());
        }
        self.check_law(&self.u, self.r, "U")?;
        match &self.w {
            CondLaw::CopyU if self.t != self.r => bad("copy_u requires t == r".into()),
            law => self.check_law(law, self.t, "W"),
        }?;
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("alpha {a} not in (0, 1]"));
            }
        }
        Ok(())
    }

    fn check_law(&self, law: &CondLaw, dims: usize, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSource(msg));
        match law {
            CondLaw::Table { depth, tables } => {
                let nv = 1usize << (self.v.depth as usize * self.s);
                if tables.len() != nv {
                    return bad(format!("{name} needs one table per V atom ({nv}), got {}", tables.len()));
                }
                let atoms = 1usize << (*depth as usize * dims);
                for table in tables {
                    if table.len() != atoms {
                        return bad(format!("{name} tables need {atoms} entries, got {}", table.len()));
                    }
                    check_distribution(table, name)?;
                }
                Ok(())
            }
            CondLaw::Linear { intercept, slope } => {
                if intercept.len() != dims || slope.len() != dims {
                    return bad(format!("{name} needs {dims} intercepts and slope rows"));
                }
                for (a, b) in intercept.iter().zip(slope) {
                    if b.len() != self.s {
                        return bad(format!("{name} slope rows need {} entries", self.s));
                    }
                    if a.abs() + b.iter().map(|x| x.abs()).sum::<f64>() > 1.0 + 1e-12 {
                        return bad(format!("{name} tilt can exceed 1, density would go negative"));
                    }
                }
                Ok(())
            }
            CondLaw::CopyU => Ok(()),
        }
    }

    /// `(α, L_U, L_W)` as given, or derived for linear families: a tilt
    /// `β_i` changes the total variation by `|Δβ_i| / 4`, so
    /// `L = Σ_i ‖slope_i‖₂ / 4` with `α = 1`.
    pub fn holder_constants(&self) -> Option<HolderConstants> {
        let derived = |law: &CondLaw| match law {
            CondLaw::Linear { slope, .. } => {
                Some(slope.iter().map(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / 4.0)
            }
            _ => None,
        };
        let l_u = self.l_u.or_else(|| derived(&self.u))?;
        let l_w = self.l_w.or_else(|| derived(&self.w))?;
        let alpha = self.alpha.unwrap_or(1.0);
        Some(HolderConstants { alpha, l_u, l_w })
    }

    /// Exact quantized law at depth `d`.
    pub fn quantized_joint(&self, d: u32) -> Result<QuantizedJoint> {
        self.validate()?;
        let cfg = QuantConfig::new(d, self.r, self.s, self.t)?;
        let (nu, nv, nw) = (cfg.atoms(self.r), cfg.atoms(self.s), cfg.atoms(self.t));
        let copy = matches!(self.w, CondLaw::CopyU);
        let mut probs = vec![0.0; nu * nv * nw];

        let g = self.v.depth;
        let needs_quadrature = matches!(self.u, CondLaw::Linear { .. }) || matches!(self.w, CondLaw::Linear { .. });
        let (nodes, node_weights) = gauss_legendre((self.r + self.t) / 2 + 2);

        let v_cells_per_dim = 1usize << d;
        let grid_per_dim = 1usize << g;
        for j in 0..nv {
            let cell = split_index(j, self.s, d);
            // grid atoms overlapping this V cell, per coordinate
            let per_dim: Vec<Vec<(usize, f64, f64)>> = cell
                .iter()
                .map(|&k| {
                    let (lo, hi) = interval(k, d);
                    (0..grid_per_dim)
                        .filter_map(|a| {
                            let (alo, ahi) = if g == 0 { (-1.0, 1.0) } else { interval(a, g) };
                            let (l, h) = (lo.max(alo), hi.min(ahi));
                            (h > l).then_some((a, l, h))
                        })
                        .collect()
                })
                .collect();
            debug_assert!(v_cells_per_dim > 0);
            for combo in cartesian(&per_dim.iter().map(Vec::len).collect::<Vec<_>>()) {
                let pieces: Vec<(usize, f64, f64)> = combo.iter().enumerate().map(|(c, &i)| per_dim[c][i]).collect();
                let atom = pieces.iter().fold(0usize, |acc, &(a, _, _)| (acc << g) | a);
                let atom_vol = 2f64.powi(self.s as i32) / (1u64 << (g as usize * self.s)) as f64;
                let density = self.v.weights[atom] / atom_vol;
                if density == 0.0 {
                    continue;
                }
                let region: Vec<(f64, f64)> = pieces.iter().map(|&(_, l, h)| (l, h)).collect();
                let region_vol: f64 = region.iter().map(|(l, h)| h - l).product();

                let quadrature: Vec<(Vec<f64>, f64)> = if needs_quadrature {
                    tensor_nodes(&region, &nodes, &node_weights)
                } else {
                    vec![(region.iter().map(|(l, h)| 0.5 * (l + h)).collect(), region_vol)]
                };
                for (v, w) in quadrature {
                    let mass = density * w;
                    let pu = cond_cell_probs(&self.u, self.r, atom, &v, d);
                    if copy {
                        for i in 0..nu {
                            probs[(i * nv + j) * nw + i] += mass * pu[i];
                        }
                    } else {
                        let pw = cond_cell_probs(&self.w, self.t, atom, &v, d);
                        for i in 0..nu {
                            let base = (i * nv + j) * nw;
                            let mi = mass * pu[i];
                            for k in 0..nw {
                                probs[base + k] += mi * pw[k];
                            }
                        }
                    }
                }
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(QuantizedJoint { cfg, probs })
    }

    pub fn quantized_pmf(&self, d: u32) -> Result<Pmf> {
        self.quantized_joint(d)?.to_pmf()
    }
}

fn check_distribution(w: &[f64], name: &str) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidSource(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSource(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// Splits a natural multi-coordinate cell index into per-coordinate indices.
fn split_index(idx: usize, dims: usize, d: u32) -> Vec<usize> {
    let mask = (1usize << d) - 1;
    (0..dims).map(|c| (idx >> (d as usize * (dims - 1 - c))) & mask).collect()
}

/// All index tuples of a mixed-radix counter, last position fastest.
fn cartesian(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

fn tensor_nodes(region: &[(f64, f64)], nodes: &[f64], weights: &[f64]) -> Vec<(Vec<f64>, f64)> {
    cartesian(&vec![nodes.len(); region.len()])
        .into_iter()
        .map(|combo| {
            let mut point = Vec::with_capacity(region.len());
            let mut w = 1.0;
            for (c, &i) in combo.iter().enumerate() {
                let (l, h) = region[c];
                point.push(0.5 * (l + h) + 0.5 * (h - l) * nodes[i]);
                w *= 0.5 * (h - l) * weights[i];
            }
            (point, w)
        })
        .collect()
}

/// `P(block ∈ cell | V = v)` for every depth-`d` cell of the block; `atom`
/// is the `V` grid atom containing `v`.
fn cond_cell_probs(law: &CondLaw, dims: usize, atom: usize, v: &[f64], d: u32) -> Vec<f64> {
    let n = 1usize << (d as usize * dims);
    match law {
        CondLaw::Table { depth, tables } => {
            let table = &tables[atom];
            let g = *depth;
            // overlap[k][a]: fraction of table atom a lying in cell k, one coordinate
            let cells = 1usize << d;
            let atoms = 1usize << g;
            let overlap: Vec<Vec<f64>> = (0..cells)
                .map(|k| {
                    let (lo, hi) = interval(k, d);
                    (0..atoms)
                        .map(|a| {
                            let (alo, ahi) = if g == 0 { (-1.0, 1.0) } else { interval(a, g) };
                            ((hi.min(ahi) - lo.max(alo)).max(0.0)) / (ahi - alo)
                        })
                        .collect()
                })
                .collect();
            (0..n)
                .map(|idx| {
                    let ks = split_index(idx, dims, d);
                    table
                        .iter()
                        .enumerate()
                        .filter(|(_, &pr)| pr > 0.0)
                        .map(|(a_idx, &pr)| {
                            let atoms_c = split_index(a_idx, dims, g);
                            pr * ks.iter().zip(&atoms_c).map(|(&k, &a)| overlap[k][a]).product::<f64>()
                        })
                        .sum()
                })
                .collect()
        }
        CondLaw::Linear { intercept, slope } => {
            let per_coord: Vec<Vec<f64>> = intercept
                .iter()
                .zip(slope)
                .map(|(a, b)| {
                    let beta = a + b.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
                    (0..1usize << d)
                        .map(|k| {
                            let (lo, hi) = interval(k, d);
                            0.5 * (hi - lo) + 0.25 * beta * (hi * hi - lo * lo)
                        })
                        .collect()
                })
                .collect();
            (0..n)
                .map(|idx| split_index(idx, dims, d).iter().enumerate().map(|(c, &k)| per_coord[c][k]).product())
                .collect()
        }
        CondLaw::CopyU => unreachable!("copy law has no marginal of its own"),
    }
}

/// Where a quantized scan draws its data from.
#[derive(Debug, Clone, Copy)]
pub enum QuantInput<'a> {
    Source(&'a Source),
    Samples { data: &'a [Vec<f64>], r: usize, s: usize, t: usize },
}

impl QuantInput<'_> {
    pub fn joint(&self, d: u32) -> Result<QuantizedJoint> {
        match *self {
            QuantInput::Source(src) => src.quantized_joint(d),
            QuantInput::Samples { data, r, s, t } => quantized_joint_from_data(data, QuantConfig::new(d, r, s, t)?),
        }
    }
}

/// Runs the conditional-independence test on the quantized pmf at each depth.
pub fn quantized_ci_scan(input: QuantInput<'_>, depths: &[u32], tol: f64) -> Result<Vec<(u32, CiVerdict)>> {
    depths
        .iter()
        .map(|&d| {
            let joint = input.joint(d)?;
            let verdict = test_ci(&joint.to_pmf()?, &joint.cfg.partition()?, tol)?;
            Ok((d, verdict))
        })
        .collect()
}

/// Whether the exhaustive tier runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExactMode {
    Off,
    /// Only when atom counts allow.
    Auto,
    /// Fail when atom counts exceed [`EXACT_MAX_ATOMS`].
    Required,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPoint {
    pub d: u32,
    /// Sup over products of per-coordinate dyadic intervals (a lower bound).
    pub delta_rect: f64,
    /// Sup over all event pairs.
    pub delta_exact: Option<f64>,
    /// `E_j ½ Σ_ik |p(i,k|j) - p(i|j) p(k|j)|` (an upper bound).
    pub delta_upper: f64,
    pub bound_rhs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub points: Vec<DeltaPoint>,
    pub exact_mode: ExactMode,
    pub constants: Option<HolderConstants>,
}

impl DeltaReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        let mut out = String::from("d,delta_rect,delta_exact,delta_upper,bound_rhs\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{:e},{},{:e},{}\n",
                p.d,
                p.delta_rect,
                opt(p.delta_exact),
                p.delta_upper,
                opt(p.bound_rhs)
            ));
        }
        out
    }
}

/// `L_U L_W s^α 2^{2α(1-d) - 2}`.
pub fn holder_bound(c: HolderConstants, s: usize, d: u32) -> f64 {
    c.l_u * c.l_w * (s as f64).powf(c.alpha) * 2f64.powf(2.0 * c.alpha * (1.0 - d as f64) - 2.0)
}

pub fn delta_curve(source: &Source, depths: &[u32], exact: ExactMode) -> Result<DeltaReport> {
    let constants = source.holder_constants();
    let points = depths
        .iter()
        .map(|&d| {
            let joint = source.quantized_joint(d)?;
            let mut point = deltas(&joint, exact)?;
            point.bound_rhs = constants.map(|c| holder_bound(c, source.s, d));
            Ok(point)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeltaReport { points, exact_mode: exact, constants })
}

/// Signed conditional-dependence array
/// `c(i,j,k) = p(i,j,k) - p(i,j) p(j,k) / p(j)`, zero where `p(j) = 0`.
///
/// Every tier is a functional of `c`: for events `S`, `T` the discrepancy is
/// `Σ_j |Σ_{i∈S, k∈T} c(i,j,k)|`. Entries within rounding of zero are
/// snapped to zero so exactly independent cells give exactly zero.
struct Residual {
    nu: usize,
    nv: usize,
    nw: usize,
    c: Vec<f64>,
}

impl Residual {
    fn new(joint: &QuantizedJoint) -> Self {
        let (nu, nv, nw) = joint.shape();
        let mut pv = vec![0.0; nv];
        let mut puv = vec![0.0; nu * nv];
        let mut pvw = vec![0.0; nv * nw];
        for i in 0..nu {
            for j in 0..nv {
                for k in 0..nw {
                    let p = joint.get(i, j, k);
                    pv[j] += p;
                    puv[i * nv + j] += p;
                    pvw[j * nw + k] += p;
                }
            }
        }
        let mut c = vec![0.0; nu * nv * nw];
        for i in 0..nu {
            for j in 0..nv {
                if pv[j] <= 0.0 {
                    continue;
                }
                for k in 0..nw {
                    let p = joint.get(i, j, k);
                    let product = puv[i * nv + j] * pvw[j * nw + k] / pv[j];
                    let v = p - product;
                    if v.abs() > 64.0 * f64::EPSILON * (p + product) {
                        c[(i * nv + j) * nw + k] = v;
                    }
                }
            }
        }
        Self { nu, nv, nw, c }
    }

    #[inline]
    fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.nv + j) * self.nw + k]
    }
}

/// Computes the three tiers of `Δ_d` for one quantized law.
pub fn deltas(joint: &QuantizedJoint, exact: ExactMode) -> Result<DeltaPoint> {
    let (nu, _, nw) = joint.shape();
    if nu > RECT_MAX_ATOMS || nw > RECT_MAX_ATOMS {
        return Err(Error::LimitExceeded(format!("atom counts ({nu}, {nw}) exceed {RECT_MAX_ATOMS}")));
    }
    let exact_ok = nu <= EXACT_MAX_ATOMS && nw <= EXACT_MAX_ATOMS;
    if exact == ExactMode::Required && !exact_ok {
        return Err(Error::LimitExceeded(format!(
            "exact Δ needs at most {EXACT_MAX_ATOMS} atoms per side, got ({nu}, {nw})"
        )));
    }
    let res = Residual::new(joint);
    let delta_rect = delta_rectangles(&res, joint.cfg);
    let delta_exact = match exact {
        ExactMode::Off => None,
        _ if !exact_ok => None,
        // rectangles are among the enumerated events; taking the max keeps
        // the ordering exact despite the different summation orders
        _ => Some(delta_exhaustive(&res).max(delta_rect)),
    };
    Ok(DeltaPoint {
        d: joint.cfg.d,
        delta_rect,
        delta_exact,
        delta_upper: 0.5 * res.c.iter().map(|v| v.abs()).sum::<f64>(),
        bound_rhs: None,
    })
}

/// Atom sets forming products of per-coordinate dyadic intervals at depths
/// `1..=d` (the whole space contributes nothing).
fn rectangles(dims: usize, d: u32) -> Vec<Vec<usize>> {
    let intervals: Vec<Vec<usize>> = (1..=d)
        .flat_map(|depth| {
            let span = 1usize << (d - depth);
            (0..1usize << depth).map(move |a| (a * span..(a + 1) * span).collect())
        })
        .chain(std::iter::once((0..1usize << d).collect()))
        .collect();
    cartesian(&vec![intervals.len(); dims])
        .into_iter()
        .map(|combo| {
            let per: Vec<&Vec<usize>> = combo.iter().map(|&c| &intervals[c]).collect();
            cartesian(&per.iter().map(|v| v.len()).collect::<Vec<_>>())
                .into_iter()
                .map(|pick| pick.iter().enumerate().fold(0usize, |acc, (c, &i)| (acc << d) | per[c][i]))
                .collect()
        })
        .collect()
}

fn delta_rectangles(res: &Residual, cfg: QuantConfig) -> f64 {
    let s_sets = rectangles(cfg.r, cfg.d);
    let t_sets = rectangles(cfg.t, cfg.d);
    let mut best = 0.0f64;
    let mut row = vec![0.0; res.nw];
    let mut per_t = vec![0.0; t_sets.len()];
    for s_set in &s_sets {
        per_t.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..res.nv {
            row.iter_mut().for_each(|x| *x = 0.0);
            for &i in s_set {
                for (k, x) in row.iter_mut().enumerate() {
                    *x += res.get(i, j, k);
                }
            }
            for (ti, t_set) in t_sets.iter().enumerate() {
                per_t[ti] += t_set.iter().map(|&k| row[k]).sum::<f64>().abs();
            }
        }
        best = per_t.iter().copied().fold(best, f64::max);
    }
    best
}

/// Exhaustive sup over all `S ⊆ U-atoms`, `T ⊆ W-atoms`, both walked in
/// Gray-code order so each step updates the running sums by one atom.
fn delta_exhaustive(res: &Residual) -> f64 {
    let (nu, nv, nw) = (res.nu, res.nv, res.nw);
    // q[j][i] = Σ_{k∈T} c(i,j,k)
    let mut q = vec![vec![0.0; nu]; nv];
    let mut acc = vec![0.0; nv];
    let mut best = 0.0f64;
    for step in 1..1usize << nw {
        let k = step.trailing_zeros() as usize;
        let sign = if ((step ^ (step >> 1)) >> k) & 1 == 1 { 1.0 } else { -1.0 };
        for (j, row) in q.iter_mut().enumerate() {
            for (i, x) in row.iter_mut().enumerate() {
                *x += sign * res.get(i, j, k);
            }
        }
        acc.iter_mut().for_each(|x| *x = 0.0);
        for s_step in 1..1usize << nu {
            let i = s_step.trailing_zeros() as usize;
            let s_sign = if ((s_step ^ (s_step >> 1)) >> i) & 1 == 1 { 1.0 } else { -1.0 };
            let mut value = 0.0;
            for (a, row) in acc.iter_mut().zip(&q) {
                *a += s_sign * row[i];
                value += a.abs();
            }
            best = best.max(value);
        }
    }
    best
}
