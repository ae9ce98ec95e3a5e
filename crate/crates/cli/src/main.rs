use std::error::Error as StdError;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use begin_core::distribution::{
    interaction_cov, make_ci_pmf, make_generic_pmf, make_ising_cycle_pmf, pmf_from_samples, CiPmfConfig, SampleMatrix,
};
use begin_core::engine::{test_ci_with, DEFAULT_TOL};
use begin_core::graph::{build_graph, export_graph, GraphFormat};
use begin_core::hadamard::{fwht, prism};
use begin_core::quantize::{delta_curve, quantized_ci_scan, ExactMode, QuantInput, Source};
use begin_core::schur::{rank_sym, sb_inverse, schur_complement, RankTol, ROW_SPACE_TOL};
use begin_core::{bitgroup::Mask, engine::assemble_sigma, Partition, Pmf};

type Result<T> = std::result::Result<T, Box<dyn StdError>>;

const RANK_MAX_WIDTH: usize = 10;

#[derive(Parser)]
#[command(name = "begin", version, about = "Exact conditional-independence analysis of binary distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test A ⟂ C | B and print the verdict as JSON (exit 0 = CI, 1 = not CI).
    Test(TestArgs),
    /// Write the interaction graph of the Schur–Banachiewicz inverse.
    Graph(GraphArgs),
    /// Compare the rank of the interaction covariance with |Supp| - 1.
    Rank(RankArgs),
    /// Print the Hadamard prism of a vector as a CSV matrix.
    Prism(VectorArgs),
    /// Print the Walsh–Hadamard transform of a vector.
    Wht(VectorArgs),
    /// Per-depth CI verdicts of a quantized (U, V, W) source or data set.
    Quantize(QuantizeArgs),
    /// Per-depth discrepancy curve of an analytic source as CSV.
    Delta(DeltaArgs),
    /// Generate a seeded pmf file.
    Random(RandomArgs),
}

#[derive(Args)]
struct Tolerances {
    /// Off-block magnitude at or below which a block counts as zero.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Relative eigenvalue cutoff for pseudoinverses (default: dim · machine epsilon).
    #[arg(long)]
    rank_tol: Option<f64>,
}

impl Tolerances {
    fn rank(&self) -> RankTol {
        RankTol(self.rank_tol)
    }
}

#[derive(Args)]
struct TestArgs {
    /// Pmf CSV (`bits,prob`).
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    pmf: Option<PathBuf>,
    /// Sample CSV of ±1 rows; the verdict is advisory unless --assert-tol is given.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    partition: PathBuf,
    #[command(flatten)]
    tols: Tolerances,
    /// Treat empirical off-block magnitudes at or below this value as zero and
    /// exit with a hard verdict.
    #[arg(long)]
    assert_tol: Option<f64>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    pmf: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    /// Output file; the format follows the extension unless --format is given.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    tols: Tolerances,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    pmf: PathBuf,
    #[arg(long)]
    rank_tol: Option<f64>,
}

#[derive(Args)]
struct VectorArgs {
    /// File of numbers separated by commas, whitespace or newlines.
    input: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Analytic source JSON.
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    source: Option<PathBuf>,
    /// Headerless CSV of [-1, 1] observations, columns U..., V..., W....
    #[arg(long, requires = "dims")]
    samples: Option<PathBuf>,
    /// Coordinate counts r,s,t for --samples.
    #[arg(long)]
    dims: Option<String>,
    /// Depth range `A..B` (inclusive) or a single depth.
    #[arg(long, default_value = "1..3")]
    depths: String,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExactArg {
    Off,
    Auto,
    Required,
}

#[derive(Args)]
struct DeltaArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long, default_value = "1..5")]
    depths: String,
    /// Whether to enumerate all event pairs.
    #[arg(long, value_enum, default_value = "auto")]
    exact: ExactArg,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-depth CI verdicts to this CSV.
    #[arg(long)]
    verdicts: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Ci,
    Generic,
    Ising,
}

#[derive(Args)]
struct RandomArgs {
    #[arg(value_enum)]
    mode: Generator,
    /// Block sizes r,s,t (ci, generic).
    #[arg(long, default_value = "1,1,1")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    zero_fraction: f64,
    /// Edge weights θ12,θ23,θ34,θ41 (ising).
    #[arg(long, default_value = "0.5,-0.75,1,0.25")]
    thetas: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write a matching partition JSON (contiguous blocks, or X1 ⟂ X3 | X2, X4 for ising).
    #[arg(long)]
    partition_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Test(a) => cmd_test(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Prism(a) => cmd_prism(a),
        Command::Wht(a) => cmd_wht(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Delta(a) => cmd_delta(a),
        Command::Random(a) => cmd_random(a),
    }
}

fn cmd_test(a: TestArgs) -> Result<u8> {
    let part = Partition::from_json_path(&a.partition)?;
    let (pmf, empirical) = match (&a.pmf, &a.samples) {
        (Some(path), _) => (Pmf::from_csv_path(path)?, false),
        (None, Some(path)) => (pmf_from_samples(&SampleMatrix::from_csv_path(path)?)?, true),
        (None, None) => unreachable!("clap requires one input"),
    };
    let tol = if empirical { a.assert_tol.unwrap_or(a.tols.tol) } else { a.tols.tol };
    let mut verdict = test_ci_with(&pmf, &part, tol, a.tols.rank())?;
    if empirical {
        verdict.empirical = Some(true);
    }
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    let hard = !empirical || a.assert_tol.is_some();
    Ok(if hard && !verdict.is_ci { 1 } else { 0 })
}

fn cmd_graph(a: GraphArgs) -> Result<u8> {
    let format: GraphFormat = match &a.format {
        Some(f) => f.parse()?,
        None => a
            .out
            .extension()
            .and_then(|e| e.to_str())
            .ok_or("output path has no extension; pass --format")?
            .parse()?,
    };
    let pmf = Pmf::from_csv_path(&a.pmf)?;
    let part = Partition::from_json_path(&a.partition)?;
    let sp = assemble_sigma(&pmf, &part)?;
    let sr = schur_complement(&sp, a.tols.rank())?;
    let omega = sb_inverse(&sp, &sr, ROW_SPACE_TOL)?;
    let g = build_graph(&omega, &sp.labels, a.tols.tol, &part.coordinate_names())?;
    fs::write(&a.out, export_graph(&g, format)?)?;
    Ok(0)
}

fn cmd_rank(a: RankArgs) -> Result<u8> {
    let pmf = Pmf::from_csv_path(&a.pmf)?;
    let p = pmf.p();
    if p > RANK_MAX_WIDTH {
        return Err(format!("rank report supports p <= {RANK_MAX_WIDTH}, got {p}").into());
    }
    let masks = (1..1u32 << p).map(|b| Mask::new(b, p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let sigma = interaction_cov(&pmf, &masks, &masks);
    let rank = rank_sym(&sigma, RankTol(a.rank_tol))?;
    let support = pmf.support_size();
    let holds = rank + 1 == support;
    let report = serde_json::json!({ "rank": rank, "support": support, "identity_holds": holds });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if holds { 0 } else { 1 })
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().map(|l| l.split('#').next().unwrap_or("")) {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            out.push(tok.parse::<f64>().map_err(|_| format!("not a number: {tok:?}"))?);
        }
    }
    Ok(out)
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn cmd_prism(a: VectorArgs) -> Result<u8> {
    let dense = prism(&read_vector(&a.input)?)?.to_dense()?;
    let mut out = String::new();
    for row in dense.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    print!("{out}");
    Ok(0)
}

fn cmd_wht(a: VectorArgs) -> Result<u8> {
    let mut out = String::new();
    for x in fwht(&read_vector(&a.input)?)? {
        let _ = writeln!(out, "{}", fmt17(x));
    }
    print!("{out}");
    Ok(0)
}

fn parse_depths(s: &str) -> Result<Vec<u32>> {
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => (lo.trim().parse::<u32>()?, hi.trim().parse::<u32>()?),
        None => {
            let d = s.trim().parse::<u32>()?;
            (d, d)
        }
    };
    if lo == 0 || hi < lo {
        return Err(format!("bad depth range {s:?}").into());
    }
    Ok((lo..=hi).collect())
}

fn parse_list<T: std::str::FromStr>(s: &str, n: usize, what: &str) -> Result<Vec<T>> {
    let parts: Vec<T> = s
        .split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| format!("bad {what} {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if parts.len() != n {
        return Err(format!("{what} needs {n} comma-separated values, got {s:?}").into());
    }
    Ok(parts)
}

fn verdict_csv(scan: &[(u32, begin_core::CiVerdict)]) -> String {
    let mut out = String::from("d,is_ci,max_offblock_S,max_offblock_Omega\n");
    for (d, v) in scan {
        let _ = writeln!(out, "{d},{},{:e},{:e}", v.is_ci, v.max_offblock_s, v.max_offblock_omega);
    }
    out
}

fn read_real_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(|x| x.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>()?);
    }
    Ok(rows)
}

fn cmd_quantize(a: QuantizeArgs) -> Result<u8> {
    let depths = parse_depths(&a.depths)?;
    let scan = if let Some(path) = &a.source {
        let src = Source::from_json_path(path)?;
        quantized_ci_scan(QuantInput::Source(&src), &depths, a.tol)?
    } else {
        let path = a.samples.as_ref().expect("clap requires one input");
        let dims: Vec<usize> = parse_list(a.dims.as_deref().unwrap_or(""), 3, "dims")?;
        let data = read_real_rows(path)?;
        let input = QuantInput::Samples { data: &data, r: dims[0], s: dims[1], t: dims[2] };
        quantized_ci_scan(input, &depths, a.tol)?
    };
    print!("{}", verdict_csv(&scan));
    Ok(0)
}

fn cmd_delta(a: DeltaArgs) -> Result<u8> {
    let depths = parse_depths(&a.depths)?;
    let src = Source::from_json_path(&a.source)?;
    let mode = match a.exact {
        ExactArg::Off => ExactMode::Off,
        ExactArg::Auto => ExactMode::Auto,
        ExactArg::Required => ExactMode::Required,
    };
    let csv = delta_curve(&src, &depths, mode)?.to_csv();
    match &a.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &a.verdicts {
        let scan = quantized_ci_scan(QuantInput::Source(&src), &depths, a.tol)?;
        fs::write(path, verdict_csv(&scan))?;
    }
    Ok(0)
}

fn cmd_random(a: RandomArgs) -> Result<u8> {
    let (pmf, part) = match a.mode {
        Generator::Ci | Generator::Generic => {
            let d: Vec<usize> = parse_list(&a.dims, 3, "dims")?;
            let pmf = match a.mode {
                Generator::Ci => make_ci_pmf(&CiPmfConfig::new(d[0], d[1], d[2]).with_zeros(a.zero_fraction), a.seed)?,
                _ => make_generic_pmf(d.iter().sum(), a.seed, a.zero_fraction)?.with_meta("dims", &a.dims),
            };
            (pmf, Partition::contiguous(d[0], d[1], d[2])?)
        }
        Generator::Ising => {
            let t: Vec<f64> = parse_list(&a.thetas, 4, "thetas")?;
            let pmf = make_ising_cycle_pmf([t[0], t[1], t[2], t[3]])?.with_meta("seed", a.seed);
            (pmf, Partition::from_strs(4, &["1000"], &["0100", "0001"], &["0010"])?)
        }
    };
    fs::write(&a.out, pmf.to_csv_string())?;
    if let Some(path) = &a.partition_out {
        fs::write(path, serde_json::to_string_pretty(&part)? + "\n")?;
    }
    Ok(0)
}
