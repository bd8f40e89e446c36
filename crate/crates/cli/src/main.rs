use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use edgeinv::inference::{reconstruct, Method, ReconstructOptions, Tolerance, Warning};
use edgeinv::invariants::{score_splits, ScoreOptions};
use edgeinv::io::fasta::{self, Ambiguity};
use edgeinv::io::{newick, presentation_to_json, tensor_file, ReconstructReport, ScoreReport};
use edgeinv::repr::{multiplicities, symmetry_adapted_basis, EquivariantModel, ModelKind};
use edgeinv::trees::nontrivial_bipartitions;
use edgeinv::{
    empirical_tensor, joint_distribution, model_fit_score, random_presentation, sample_alignment, Bipartition,
    PatternTensor,
};

/// Exit status for answers that carry warnings.
const EXIT_WARNINGS: u8 = 2;
const MAX_DISPLAY_POWER: usize = 4;

#[derive(Parser)]
#[command(name = "edgeinv", version, about = "Tree topologies from edge invariants of equivariant models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Character table, multiplicities and symmetry-adapted basis of a model.
    ModelInfo {
        #[arg(long)]
        model: ModelKind,
        /// Largest tensor power to report; the basis is shown for this power.
        #[arg(long, default_value_t = 2)]
        power: usize,
        #[arg(long)]
        json: bool,
    },
    /// Simulate a joint distribution, or an alignment when --sites is given.
    Simulate {
        #[arg(long)]
        model: ModelKind,
        /// Newick string, or a path to a Newick file.
        #[arg(long)]
        tree: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        sites: Option<u64>,
        #[arg(long, default_value_t = edgeinv::models::DEFAULT_CONCENTRATION)]
        concentration: f64,
        /// Tensor encoding when no --sites is given.
        #[arg(long, value_enum, default_value_t = TensorFormat::Json)]
        format: TensorFormat,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also write the sampled parameters as JSON.
        #[arg(long)]
        presentation: Option<PathBuf>,
    },
    /// Score bipartitions of a tensor or alignment.
    Score {
        #[arg(long)]
        model: ModelKind,
        #[command(flatten)]
        input: InputArgs,
        /// A bipartition such as `1,2|3,4` (taxon names are accepted).
        #[arg(long, conflicts_with = "all_splits")]
        split: Vec<String>,
        #[arg(long)]
        all_splits: bool,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Reconstruct the tree topology.
    Reconstruct {
        #[arg(long)]
        model: ModelKind,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Pass threshold on split scores; defaults to 1e-8 for tensors and
        /// to a data-driven value for alignments.
        #[arg(long)]
        tol: Option<f64>,
        /// Split selection: complete an underdetermined tree with the best
        /// remaining compatible splits.
        #[arg(long)]
        complete: bool,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Distance of the input from the invariant subspace of each model.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_delimiter = ',', default_values_t = ModelKind::CHAIN.to_vec())]
        models: Vec<ModelKind>,
    },
}

#[derive(clap::Args)]
struct InputArgs {
    /// FASTA alignment, binary tensor or JSON tensor.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    format: InputFormat,
    #[arg(long, default_value = "error", value_parser = parse_ambiguity)]
    ambiguous: Ambiguity,
}

#[derive(clap::Args)]
struct ScoringArgs {
    /// Score the raw tensor instead of its group average.
    #[arg(long)]
    no_average: bool,
    #[arg(long, default_value_t = edgeinv::tensor::DEFAULT_RANK_TOL)]
    rank_tol: f64,
}

impl ScoringArgs {
    fn options(&self) -> ScoreOptions {
        ScoreOptions { group_average: !self.no_average, rank_tol: self.rank_tol }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TensorFormat {
    Json,
    Binary,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum InputFormat {
    Auto,
    Fasta,
    Tensor,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exhaustive,
    Splits,
}

fn parse_ambiguity(s: &str) -> Result<Ambiguity, String> {
    s.parse().map_err(|e: edgeinv::Error| e.to_string())
}

struct Input {
    tensor: PatternTensor,
    taxa: Vec<String>,
    from_alignment: bool,
}

fn load_input(args: &InputArgs) -> Result<Input> {
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let binary = bytes.starts_with(tensor_file::MAGIC);
    let text = || String::from_utf8(bytes.clone()).context("input is neither a tensor file nor text");
    let is_fasta = match args.format {
        InputFormat::Fasta => true,
        InputFormat::Tensor => false,
        InputFormat::Auto => !binary && !text()?.trim_start().starts_with('{'),
    };
    if is_fasta {
        let aln = fasta::read(&text()?, args.ambiguous)?;
        let tensor = empirical_tensor(&aln)?;
        return Ok(Input { tensor, taxa: aln.taxa, from_alignment: true });
    }
    let tensor = if binary { tensor_file::from_bytes(&bytes)? } else { tensor_file::from_json(&text()?)? };
    let taxa = (1..=tensor.n()).map(|i| i.to_string()).collect();
    Ok(Input { tensor, taxa, from_alignment: false })
}

/// Parses a split given by leaf numbers or taxon names.
fn parse_split(spec: &str, taxa: &[String]) -> Result<Bipartition> {
    let Some((a, b)) = spec.split_once('|') else { bail!("split `{spec}` has no `|`") };
    let side = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match taxa.iter().position(|x| x == t) {
                Some(i) => Ok(i + 1),
                None => t.parse::<usize>().with_context(|| format!("unknown taxon `{t}`")),
            })
            .collect()
    };
    let (a, b) = (side(a)?, side(b)?);
    let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
    all.sort_unstable();
    if all != (1..=taxa.len()).collect::<Vec<_>>() {
        bail!("split `{spec}` must list every one of the {} leaves exactly once", taxa.len());
    }
    Ok(Bipartition::new(taxa.len(), a)?)
}

fn write_out(path: Option<&Path>, data: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, data).with_context(|| format!("writing {}", p.display())),
        None => match std::io::stdout().lock().write_all(data) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            other => Ok(other?),
        },
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_out(None, text.as_bytes())
}

fn format_multiplicity(model: &EquivariantModel, l: usize) -> Result<String> {
    Ok(multiplicities(model, l)?.to_string())
}

fn pattern_string(model: &EquivariantModel, mut x: usize, l: usize) -> String {
    let mut out = vec![' '; l];
    for slot in out.iter_mut().rev() {
        *slot = model.states[x % model.k];
        x /= model.k;
    }
    out.into_iter().collect()
}

/// Small-denominator fraction `p/q` equal to `x` within 1e-10.
fn rational(x: f64) -> Option<(u64, u64)> {
    (1..=10_000u64).find_map(|q| {
        let p = (x * q as f64).round();
        ((x - p / q as f64).abs() < 1e-10).then_some((p as u64, q))
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn isqrt(n: u64) -> Option<u64> {
    let r = (n as f64).sqrt().round() as u64;
    (r * r == n).then_some(r)
}

/// Exact form of `|c|` as a square root of a fraction, or decimals.
fn magnitude(c: f64) -> String {
    let Some((p, q)) = rational(c * c) else { return format!("{:.6}", c.abs()) };
    let g = gcd(p, q);
    let (p, q) = (p / g, q / g);
    match (isqrt(p), isqrt(q)) {
        (Some(a), Some(1)) => a.to_string(),
        (Some(a), Some(b)) => format!("{a}/{b}"),
        (Some(1), None) => format!("1/√{q}"),
        _ => format!("√({p}/{q})"),
    }
}

/// `1/√N (+AA -CC ...)` when all nonzero coefficients share one magnitude,
/// otherwise one exact coefficient per term.
fn exact_vector(model: &EquivariantModel, support: &[u32], coeffs: &[f64], l: usize) -> String {
    let terms: Vec<(String, f64)> = support
        .iter()
        .zip(coeffs)
        .filter(|(_, c)| c.abs() > 1e-12)
        .map(|(&p, &c)| (pattern_string(model, p as usize, l), c))
        .collect();
    let sign = |c: f64| if c > 0.0 { '+' } else { '-' };
    let mag = terms[0].1.abs();
    if terms.iter().all(|(_, c)| (c.abs() - mag).abs() < 1e-12) {
        let body: Vec<String> = terms.iter().map(|(pat, c)| format!("{}{pat}", sign(*c))).collect();
        return format!("{} ({})", magnitude(mag), body.join(" "));
    }
    let body: Vec<String> = terms.iter().map(|(pat, c)| format!("{}{}·{pat}", sign(*c), magnitude(*c))).collect();
    format!("({})", body.join(" "))
}

#[derive(Serialize)]
struct ModelInfoJson {
    model: ModelKind,
    order: usize,
    irreps: Vec<IrrepJson>,
    classes: Vec<ClassJson>,
    character_table: Vec<Vec<i64>>,
    permutation_character: Vec<i64>,
    multiplicities: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct IrrepJson {
    name: String,
    dim: usize,
}

#[derive(Serialize)]
struct ClassJson {
    representative: String,
    size: usize,
}

fn model_info(kind: ModelKind, power: usize, json: bool) -> Result<()> {
    if power == 0 {
        bail!("--power must be at least 1");
    }
    let model = kind.model();
    let mut out = String::new();
    if json {
        let doc = ModelInfoJson {
            model: kind,
            order: model.order(),
            irreps: model.irreps.iter().map(|i| IrrepJson { name: i.name.clone(), dim: i.dim }).collect(),
            classes: (0..model.classes.len())
                .map(|c| ClassJson { representative: model.class_label(c), size: model.classes[c].members.len() })
                .collect(),
            character_table: model.character_table.clone(),
            permutation_character: model.permutation_character.clone(),
            multiplicities: (1..=power).map(|l| Ok(multiplicities(model, l)?.entries)).collect::<Result<_>>()?,
        };
        return print_json(&doc);
    }
    writeln!(out, "{kind}: group of order {}", model.order())?;
    let labels: Vec<String> = (0..model.classes.len())
        .map(|c| format!("{}[{}]", model.class_label(c), model.classes[c].members.len()))
        .collect();
    let width = labels.iter().map(|s| s.chars().count()).max().unwrap_or(0).max(3);
    let name_width = model.irreps.iter().map(|i| i.name.chars().count()).max().unwrap_or(0).max(2);
    writeln!(out)?;
    write!(out, "{:name_width$}", "")?;
    for l in &labels {
        write!(out, "  {l:>width$}")?;
    }
    writeln!(out)?;
    let rows = model.irreps.iter().map(|i| i.name.clone()).zip(model.character_table.iter());
    for (name, row) in rows.chain(std::iter::once(("χ".to_string(), &model.permutation_character))) {
        write!(out, "{name:name_width$}")?;
        for v in row {
            write!(out, "  {v:>width$}")?;
        }
        writeln!(out)?;
    }
    writeln!(out)?;
    for l in 1..=power {
        writeln!(out, "m({l}) = {}", format_multiplicity(model, l)?)?;
    }
    if power > MAX_DISPLAY_POWER {
        writeln!(out, "\n(basis display is limited to powers up to {MAX_DISPLAY_POWER})")?;
        return write_out(None, out.as_bytes());
    }
    let basis = symmetry_adapted_basis(model, power)?;
    writeln!(out, "\nsymmetry-adapted basis of W^{power} ({} vectors)", basis.size())?;
    for v in basis.vectors() {
        writeln!(out, 
            "  {} r={} j={}: {}",
            model.irreps[v.irrep].name,
            v.copy + 1,
            v.mult + 1,
            exact_vector(model, basis.support(v), &v.coeffs, power)
        )?;
    }
    write_out(None, out.as_bytes())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    kind: ModelKind,
    tree: &str,
    seed: u64,
    sites: Option<u64>,
    concentration: f64,
    format: TensorFormat,
    output: Option<&Path>,
    presentation: Option<&Path>,
) -> Result<()> {
    let text = if Path::new(tree).is_file() { fs::read_to_string(tree)? } else { tree.to_string() };
    let parsed = newick::parse(&text)?;
    let pres = random_presentation(kind.model(), &parsed.tree, seed, concentration)?;
    if let Some(p) = presentation {
        fs::write(p, presentation_to_json(&pres, &parsed.taxa)?)?;
    }
    let psi = joint_distribution(&pres)?;
    match (sites, format) {
        (Some(n), _) => {
            let mut aln = sample_alignment(&psi, n, seed)?;
            aln.taxa = parsed.taxa;
            write_out(output, fasta::write(&aln).as_bytes())
        }
        (None, TensorFormat::Json) => write_out(output, (tensor_file::to_json(&psi) + "\n").as_bytes()),
        (None, TensorFormat::Binary) => {
            if output.is_none() {
                bail!("binary tensors need --output");
            }
            write_out(output, &tensor_file::to_bytes(&psi))
        }
    }
}

fn score(kind: ModelKind, input: &InputArgs, splits: &[String], all: bool, opts: ScoreOptions) -> Result<u8> {
    let Input { tensor, taxa, .. } = load_input(input)?;
    let chosen: Vec<Bipartition> = if all || splits.is_empty() {
        nontrivial_bipartitions(tensor.n())
    } else {
        splits.iter().map(|s| parse_split(s, &taxa)).collect::<Result<_>>()?
    };
    let model = kind.model();
    let scores = score_splits(&tensor, &chosen, model, &opts)?;
    let mut report = ScoreReport::new(kind, tensor.n(), &scores);
    // a rank below the edge target at any split means a degenerate tensor
    for s in &scores {
        if let Some(achieved) = &s.achieved {
            if achieved.iter().zip(&s.expected.entries).any(|(a, e)| a < e) {
                report.warnings.push(Warning::Genericity {
                    split: s.split,
                    achieved: achieved.clone(),
                    expected: s.expected.entries.clone(),
                });
            }
        }
    }
    print_json(&report)?;
    Ok(if report.warnings.is_empty() { 0 } else { EXIT_WARNINGS })
}

fn run_reconstruct(
    kind: ModelKind,
    input: &InputArgs,
    method: Option<MethodArg>,
    tol: Option<f64>,
    complete: bool,
    score: ScoreOptions,
) -> Result<u8> {
    let Input { tensor, taxa, from_alignment } = load_input(input)?;
    let tol = match tol {
        Some(t) => Tolerance::Fixed(t),
        None if from_alignment => Tolerance::DataDriven,
        None => Tolerance::Exact,
    };
    let method = method.map(|m| match m {
        MethodArg::Exhaustive => Method::Exhaustive,
        MethodArg::Splits => Method::Splits,
    });
    let opts = ReconstructOptions { method, tol, score, complete };
    let result = reconstruct(&tensor, kind.model(), &opts)?;
    print_json(&ReconstructReport::new(kind, &result, &taxa)?)?;
    Ok(if result.is_confident() { 0 } else { EXIT_WARNINGS })
}

#[derive(Serialize)]
struct FitEntry {
    model: ModelKind,
    score: f64,
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    taxa: Vec<String>,
    fits: Vec<FitEntry>,
    warnings: Vec<Warning>,
}

fn fit(input: &InputArgs, models: &[ModelKind]) -> Result<u8> {
    let Input { tensor, taxa, .. } = load_input(input)?;
    let fits = models
        .iter()
        .map(|&m| Ok(FitEntry { model: m, score: model_fit_score(&tensor, m.model())? }))
        .collect::<Result<_>>()?;
    print_json(&FitReport { n: tensor.n(), taxa, fits, warnings: Vec::new() })?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::ModelInfo { model, power, json } => model_info(model, power, json).map(|_| 0),
        Command::Simulate { model, tree, seed, sites, concentration, format, output, presentation } => simulate(
            model,
            &tree,
            seed,
            sites,
            concentration,
            format,
            output.as_deref(),
            presentation.as_deref(),
        )
        .map(|_| 0),
        Command::Score { model, input, split, all_splits, scoring } => {
            score(model, &input, &split, all_splits, scoring.options())
        }
        Command::Reconstruct { model, input, method, tol, complete, scoring } => {
            run_reconstruct(model, &input, method, tol, complete, scoring.options())
        }
        Command::Fit { input, models } => fit(&input, &models),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
