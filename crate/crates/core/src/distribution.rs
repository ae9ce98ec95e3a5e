//! Exact pmfs over `{±1}^p`, empirical samples, interaction moments and the
//! seeded generators used as test beds.
//!
//! Cell index convention: bit `j` of a cell index (counting `X_1` as the most
//! significant bit) is set iff `X_j = -1`.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::bitgroup::Mask;
use crate::error::{Error, Result};
use crate::hadamard;
use crate::MAX_WIDTH;

/// Denominator exponent used when rounding generated probabilities to dyadic
/// rationals.
const FACTOR_BITS: u32 = 12;
const GENERIC_BITS: u32 = 30;

/// Exact probability vector over the `2^p` cells of `{±1}^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    p: usize,
    probs: Vec<f64>,
    meta: Vec<(String, String)>,
}

impl Pmf {
    pub fn new(p: usize, probs: Vec<f64>) -> Result<Self> {
        if p > MAX_WIDTH {
            return Err(Error::WidthTooLarge(p));
        }
        if probs.len() != 1 << p {
            return Err(Error::InvalidPmf(format!("expected {} cells, got {}", 1usize << p, probs.len())));
        }
        if let Some(bad) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidPmf(format!("invalid cell probability {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}")));
        }
        Ok(Self { p, probs, meta: Vec::new() })
    }

    /// Builds a pmf from nonnegative weights by normalizing them.
    pub fn from_weights(p: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidPmf("weights have no positive mass".into()));
        }
        Self::new(p, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(p: usize) -> Result<Self> {
        let n = 1usize << p;
        Self::new(p, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(p: usize, cell: usize) -> Result<Self> {
        let mut probs = vec![0.0; 1 << p];
        *probs.get_mut(cell).ok_or_else(|| Error::InvalidPmf(format!("cell {cell} out of range")))? = 1.0;
        Self::new(p, probs)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, cell: usize) -> f64 {
        self.probs[cell]
    }

    /// Cells with positive probability.
    pub fn support(&self) -> Vec<usize> {
        (0..self.probs.len()).filter(|&c| self.probs[c] > 0.0).collect()
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&v| v > 0.0).count()
    }

    /// Generator metadata recorded as `(key, value)` pairs.
    pub fn meta(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn moments(&self) -> MomentVector {
        moments_from_pmf(self)
    }

    /// Parses the `bits,prob` CSV format. Missing cells have probability 0.
    pub fn from_csv_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let meta: Vec<(String, String)> = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix('#'))
            .filter_map(|l| l.split_once(':'))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "bits" || &headers[1] != "prob" {
            return Err(Error::InvalidPmf(format!("expected header \"bits,prob\", got {headers:?}")));
        }
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut width = None;
        for record in rdr.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidPmf(format!("malformed row {record:?}")));
            }
            let bits = &record[0];
            let cell = parse_cell(bits)?;
            match width {
                None => width = Some(bits.len()),
                Some(w) if w != bits.len() => {
                    return Err(Error::InvalidPmf(format!("row {bits:?} has width {} not {w}", bits.len())))
                }
                _ => {}
            }
            let prob: f64 = record[1]
                .parse()
                .map_err(|_| Error::InvalidPmf(format!("bad probability {:?}", &record[1])))?;
            entries.push((cell, prob));
        }
        let p = width.ok_or_else(|| Error::InvalidPmf("no rows".into()))?;
        if p > MAX_WIDTH {
            return Err(Error::WidthTooLarge(p));
        }
        let mut probs = vec![0.0; 1 << p];
        let mut seen = vec![false; 1 << p];
        for (cell, prob) in entries {
            if seen[cell] {
                return Err(Error::InvalidPmf(format!("duplicate cell {cell}")));
            }
            seen[cell] = true;
            if !prob.is_finite() || prob < 0.0 {
                return Err(Error::InvalidPmf(format!("invalid probability {prob}")));
            }
            probs[cell] = prob;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}")));
        }
        if (total - 1.0).abs() > 1e-12 {
            probs.iter_mut().for_each(|v| *v /= total);
        }
        let mut pmf = Self::new(p, probs)?;
        pmf.meta = meta;
        Ok(pmf)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Serializes nonzero cells as `bits,prob` with `0/1` bit strings.
    /// Metadata is written as leading `# key: value` comments.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str("bits,prob\n");
        for (cell, &prob) in self.probs.iter().enumerate() {
            if prob > 0.0 {
                let _ = writeln!(out, "{},{prob:e}", cell_string(cell, self.p));
            }
        }
        out
    }
}

fn parse_cell(bits: &str) -> Result<usize> {
    let mut cell = 0usize;
    for ch in bits.chars() {
        cell <<= 1;
        match ch {
            '0' | '+' => {}
            '1' | '-' => cell |= 1,
            _ => return Err(Error::InvalidPmf(format!("bad cell pattern {bits:?}"))),
        }
    }
    if bits.is_empty() {
        return Err(Error::InvalidPmf("empty cell pattern".into()));
    }
    Ok(cell)
}

/// `0/1` rendering of a cell index, `X_1` leftmost (`1` means `-1`).
pub fn cell_string(cell: usize, p: usize) -> String {
    (0..p).map(|j| if (cell >> (p - 1 - j)) & 1 == 1 { '1' } else { '0' }).collect()
}

/// `m[Λ] = E[X_Λ]` for every mask `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    #[inline]
    pub fn get(&self, m: Mask) -> f64 {
        self.0[m.bits() as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `m = H_p π` via the fast transform.
pub fn moments_from_pmf(pmf: &Pmf) -> MomentVector {
    MomentVector(hadamard::fwht(&pmf.probs).expect("pmf length is a power of two"))
}

/// `Cov(X_r, X_c) = m[r XOR c] - m[r] m[c]` for every row/column mask pair.
pub fn interaction_cov(pmf: &Pmf, rows: &[Mask], cols: &[Mask]) -> DMatrix<f64> {
    interaction_cov_from_moments(&pmf.moments(), rows, cols)
}

pub fn interaction_cov_from_moments(m: &MomentVector, rows: &[Mask], cols: &[Mask]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let (r, c) = (rows[i].bits() as usize, cols[j].bits() as usize);
        m.0[r ^ c] - m.0[r] * m.0[c]
    })
}

/// Observations of a `±1` vector, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    p: usize,
    values: Vec<i8>,
}

impl SampleMatrix {
    pub fn new(p: usize, values: Vec<i8>) -> Result<Self> {
        if p == 0 || p > MAX_WIDTH {
            return Err(Error::InvalidSamples(format!("unsupported width {p}")));
        }
        if values.is_empty() || values.len() % p != 0 {
            return Err(Error::InvalidSamples(format!("{} values do not form rows of {p}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| **v != 1 && **v != -1) {
            return Err(Error::InvalidSamples(format!("entry {v} is not ±1")));
        }
        Ok(Self { p, values })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidSamples("ragged rows".into()));
        }
        Self::new(p, rows.concat())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.p
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.values.chunks_exact(self.p)
    }

    /// Headerless CSV of `±1` integers, one observation per line.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| match f {
                    "1" | "+1" => Ok(1),
                    "-1" => Ok(-1),
                    _ => Err(Error::InvalidSamples(format!("entry {f:?} is not ±1"))),
                })
                .collect::<Result<Vec<i8>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

/// Empirical cell frequencies.
pub fn pmf_from_samples(data: &SampleMatrix) -> Result<Pmf> {
    let p = data.p();
    let mut counts = vec![0u64; 1 << p];
    for row in data.rows() {
        let cell = row.iter().fold(0usize, |acc, &v| (acc << 1) | usize::from(v == -1));
        counts[cell] += 1;
    }
    let n = data.n() as f64;
    Pmf::new(p, counts.into_iter().map(|c| c as f64 / n).collect())
        .map(|pmf| pmf.with_meta("generator", "empirical").with_meta("n", data.n()))
}

/// Parameters of [`make_ci_pmf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiPmfConfig {
    pub r: usize,
    pub s: usize,
    pub t: usize,
    /// Symmetric Dirichlet concentration for every factor table.
    pub concentration: f64,
    /// Probability that an individual table entry is forced to zero.
    pub zero_fraction: f64,
}

impl CiPmfConfig {
    pub fn new(r: usize, s: usize, t: usize) -> Self {
        Self { r, s, t, concentration: 1.0, zero_fraction: 0.0 }
    }

    pub fn with_zeros(mut self, zero_fraction: f64) -> Self {
        self.zero_fraction = zero_fraction;
        self
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        if w.iter().sum::<f64>() > 0.0 {
            return w;
        }
    }
}

/// Rounds nonnegative weights to multiples of `2^-bits` summing to one.
/// Entries with positive weight stay positive.
fn dyadic_round(weights: &[f64], bits: u32) -> Vec<f64> {
    let scale = (1u64 << bits) as f64;
    let total: f64 = weights.iter().sum();
    let target = 1i64 << bits;
    let raw: Vec<f64> = weights.iter().map(|w| w / total * scale).collect();
    let mut counts: Vec<i64> = raw
        .iter()
        .map(|&x| if x > 0.0 { (x.floor() as i64).max(1) } else { 0 })
        .collect();
    let mut deficit = target - counts.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut k = 0;
    while deficit > 0 {
        counts[order[k % order.len()]] += 1;
        deficit -= 1;
        k += 1;
    }
    while deficit < 0 {
        let i = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        counts[i] -= 1;
        deficit += 1;
    }
    counts.into_iter().map(|c| c as f64 / scale).collect()
}

/// A random distribution over `n` outcomes with optional hard zeros; at least
/// one outcome keeps positive mass.
fn random_table(rng: &mut ChaCha8Rng, n: usize, concentration: f64, zero_fraction: f64) -> Vec<f64> {
    let mut w = dirichlet(rng, n, concentration);
    if zero_fraction > 0.0 {
        for v in w.iter_mut() {
            if rng.random_bool(zero_fraction) {
                *v = 0.0;
            }
        }
        if w.iter().all(|&v| v == 0.0) {
            let keep = rng.random_range(0..n);
            w[keep] = 1.0;
        }
    }
    dyadic_round(&w, FACTOR_BITS)
}

/// A pmf over `(A, B, C) ∈ {±1}^{r+s+t}` of the form `p(b) p(a|b) p(c|b)`.
///
/// Coordinates are laid out `A` first (most significant), then `B`, then
/// `C`; see [`crate::engine::Partition::contiguous`]. All factors are dyadic
/// rationals, so cell probabilities are exact in binary64.
pub fn make_ci_pmf(cfg: &CiPmfConfig, seed: u64) -> Result<Pmf> {
    let CiPmfConfig { r, s, t, concentration, zero_fraction } = *cfg;
    let p = r + s + t;
    if p > MAX_WIDTH {
        return Err(Error::WidthTooLarge(p));
    }
    if !(concentration > 0.0) {
        return Err(Error::InvalidPmf("concentration must be positive".into()));
    }
    if !(0.0..1.0).contains(&zero_fraction) {
        return Err(Error::InvalidPmf("zero_fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pb = random_table(&mut rng, 1 << s, concentration, zero_fraction);
    let mut probs = vec![0.0; 1 << p];
    for (b, &wb) in pb.iter().enumerate() {
        let pa = random_table(&mut rng, 1 << r, concentration, zero_fraction);
        let pc = random_table(&mut rng, 1 << t, concentration, zero_fraction);
        for (a, &wa) in pa.iter().enumerate() {
            for (c, &wc) in pc.iter().enumerate() {
                probs[(a << (s + t)) | (b << t) | c] = wb * wa * wc;
            }
        }
    }
    Ok(Pmf::new(p, probs)?
        .with_meta("generator", "ci")
        .with_meta("dims", format!("{r},{s},{t}"))
        .with_meta("concentration", concentration)
        .with_meta("zero_fraction", zero_fraction)
        .with_meta("seed", seed))
}

/// A seeded Dirichlet(1) pmf on `{±1}^p` with `round(zero_fraction · 2^p)`
/// structural zeros.
pub fn make_generic_pmf(p: usize, seed: u64, zero_fraction: f64) -> Result<Pmf> {
    if p > MAX_WIDTH {
        return Err(Error::WidthTooLarge(p));
    }
    if !(0.0..1.0).contains(&zero_fraction) {
        return Err(Error::InvalidPmf("zero_fraction must lie in [0, 1)".into()));
    }
    let n = 1usize << p;
    let zeros = (zero_fraction * n as f64).round() as usize;
    if zeros >= n {
        return Err(Error::InvalidPmf(format!("zero_fraction {zero_fraction} leaves an empty support")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = dirichlet(&mut rng, n, 1.0);
    let mut cells: Vec<usize> = (0..n).collect();
    cells.shuffle(&mut rng);
    for &c in &cells[..zeros] {
        w[c] = 0.0;
    }
    Ok(Pmf::new(p, dyadic_round(&w, GENERIC_BITS))?
        .with_meta("generator", "generic")
        .with_meta("p", p)
        .with_meta("zero_fraction", zero_fraction)
        .with_meta("seed", seed))
}

/// A seeded pmf whose support has exactly `support` cells.
pub fn make_pmf_with_support(p: usize, support: usize, seed: u64) -> Result<Pmf> {
    let n = 1usize << p;
    if support == 0 || support > n {
        return Err(Error::InvalidPmf(format!("support size {support} not in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..n).collect();
    cells.shuffle(&mut rng);
    let w = dirichlet(&mut rng, support, 2.0);
    let mut weights = vec![0.0; n];
    for (&c, &v) in cells.iter().zip(&w) {
        weights[c] = v;
    }
    Ok(Pmf::new(p, dyadic_round(&weights, GENERIC_BITS))?
        .with_meta("generator", "support")
        .with_meta("support", support)
        .with_meta("seed", seed))
}

/// Pairwise Ising pmf `∝ exp(Σ θ_ij x_i x_j)` on `{±1}^p`; edges use 0-based
/// coordinates.
pub fn make_ising_pmf(p: usize, edges: &[(usize, usize, f64)]) -> Result<Pmf> {
    if p > MAX_WIDTH {
        return Err(Error::WidthTooLarge(p));
    }
    for &(i, j, theta) in edges {
        if i >= p || j >= p || i == j {
            return Err(Error::InvalidPmf(format!("bad edge ({i}, {j})")));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidPmf(format!("non-finite weight {theta}")));
        }
    }
    let energies: Vec<f64> = (0..1usize << p)
        .map(|cell| {
            edges
                .iter()
                .map(|&(i, j, theta)| {
                    let xi = (cell >> (p - 1 - i)) & 1;
                    let xj = (cell >> (p - 1 - j)) & 1;
                    if xi == xj {
                        theta
                    } else {
                        -theta
                    }
                })
                .sum()
        })
        .collect();
    let top = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = energies.into_iter().map(|e| (e - top).exp()).collect();
    Pmf::from_weights(p, weights)
}

/// Ising model on the four-cycle `X1-X2-X3-X4-X1` with weights
/// `(θ12, θ23, θ34, θ41)`.
pub fn make_ising_cycle_pmf(thetas: [f64; 4]) -> Result<Pmf> {
    let [t12, t23, t34, t41] = thetas;
    Ok(make_ising_pmf(4, &[(0, 1, t12), (1, 2, t23), (2, 3, t34), (3, 0, t41)])?
        .with_meta("generator", "ising")
        .with_meta("thetas", format!("{t12},{t23},{t34},{t41}")))
}

/// Nonstationary first-order binary Markov chain of length `k` with random
/// dyadic initial law and transition rows.
pub fn make_markov_chain_pmf(k: usize, seed: u64) -> Result<Pmf> {
    if k == 0 || k > MAX_WIDTH {
        return Err(Error::WidthTooLarge(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_table(&mut rng, 2, 1.0, 0.0);
    let transitions: Vec<[Vec<f64>; 2]> = (1..k)
        .map(|_| [random_table(&mut rng, 2, 1.0, 0.0), random_table(&mut rng, 2, 1.0, 0.0)])
        .collect();
    let probs = (0..1usize << k)
        .map(|cell| {
            let bit = |j: usize| (cell >> (k - 1 - j)) & 1;
            let mut prob = init[bit(0)];
            for j in 1..k {
                prob *= transitions[j - 1][bit(j - 1)][bit(j)];
            }
            prob
        })
        .collect();
    Ok(Pmf::new(k, probs)?
        .with_meta("generator", "markov")
        .with_meta("k", k)
        .with_meta("seed", seed))
}
