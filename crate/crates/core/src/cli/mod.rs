//! The `embcomp` command line.

mod simulate;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::compress::{
    compress, ClipSearch, CompressedEmbedding, CompressionSpec, Method, Payload, Rounding,
    DEFAULT_CLIP_TOL, DEFAULT_GRID_POINTS,
};
use crate::embedding::Vocabulary;
use crate::error::{Error, ErrorKind, Result};
use crate::io::binary::MAGIC;
use crate::io::json::{read_report, write_report, Envelope};
use crate::io::{
    read_compressed, read_performance_table, read_text_embedding, write_compressed, write_csv,
    write_text_embedding, TextFormat,
};
use crate::linalg::DenseMatrix;
use crate::measures::{quality_report, QualityReport};
use crate::selection::{evaluate_measures, select_best_matrices, MeasureName, MeasureSpec};

pub use simulate::Experiment;

const REPORT_KIND: &str = "quality_reports";

#[derive(Debug, Parser)]
#[command(
    name = "embcomp",
    version,
    about = "Compress embedding matrices and rank compressed variants by eigenspace overlap"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    /// Layout of text embedding files.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    /// Header iff the first line is exactly two positive integers.
    Auto,
    /// No header line.
    Glove,
    /// Mandatory "n d" header line.
    Fasttext,
}

impl From<FormatArg> for TextFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Auto => TextFormat::Auto,
            FormatArg::Glove => TextFormat::Glove,
            FormatArg::Fasttext => TextFormat::Fasttext,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress a text embedding into a binary container.
    Compress(CompressArgs),
    /// Score compressed embeddings against the base embedding.
    Measure(MeasureArgs),
    /// Rank candidates by one measure and print the winner.
    Select(SelectArgs),
    /// Compare measure values with downstream performance.
    Evaluate(EvaluateArgs),
    /// Run a synthetic experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Decompress a container back to a text embedding.
    Reconstruct(ReconstructArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Uniform,
    Kmeans,
    Pca,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoundingArg {
    #[value(alias = "deterministic")]
    Det,
    #[value(alias = "stochastic")]
    Stoch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClipSearchArg {
    /// Golden-section search over [0, max|X|].
    Golden,
    /// Exhaustive sweep over 1000 evenly spaced thresholds.
    Grid,
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[arg(long, value_enum)]
    method: MethodArg,

    /// Bits per entry (uniform and kmeans).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=32))]
    bits: Option<u8>,

    /// Output dimension (pca).
    #[arg(long)]
    dim: Option<usize>,

    /// Rounding rule (uniform only; default det).
    #[arg(long, value_enum)]
    rounding: Option<RoundingArg>,

    /// Clip threshold search (uniform only; default golden).
    #[arg(long, value_enum)]
    clip_search: Option<ClipSearchArg>,

    /// Store the right singular vectors so reconstruction returns d columns (pca only).
    #[arg(long)]
    keep_v: bool,

    /// Input text embedding.
    input: PathBuf,

    /// Output container.
    output: PathBuf,
}

/// `None` selects the default ridge parameter.
#[derive(Debug, Clone, Copy)]
struct Lambda(Option<f64>);

fn parse_lambda(s: &str) -> std::result::Result<Lambda, String> {
    if s == "auto" {
        return Ok(Lambda(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(Lambda(Some(v))),
        _ => Err(format!("expected \"auto\" or a positive number, got {s:?}")),
    }
}

fn parse_measure(s: &str) -> std::result::Result<MeasureName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct MeasureArgs {
    /// Ridge parameter of the Δ measures: "auto" (smallest squared singular value of the base) or a positive number.
    #[arg(long, default_value = "auto", value_parser = parse_lambda)]
    lambda: Lambda,

    /// Comma-separated measures to print (default: all). The report always holds every measure.
    #[arg(long, value_delimiter = ',', value_parser = parse_measure)]
    measures: Vec<MeasureName>,

    /// Base text embedding.
    base: PathBuf,

    /// Compressed containers or text embeddings.
    #[arg(required = true)]
    compressed: Vec<PathBuf>,

    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Measure used to rank the candidates.
    #[arg(long, default_value = "eigenspace_overlap", value_parser = parse_measure)]
    criterion: MeasureName,

    /// Optional JSON file for the ranking.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Base text embedding.
    base: PathBuf,

    /// Compressed containers or text embeddings.
    #[arg(required = true)]
    candidates: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV with columns candidate_id,task,performance,seed.
    #[arg(long)]
    perf: PathBuf,

    /// Directory of reports written by `measure`.
    #[arg(long)]
    reports: PathBuf,

    /// JSON summary path.
    #[arg(long)]
    out: PathBuf,

    /// Also write the summary rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Comma-separated tasks (default: every task in the table).
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,

    /// Comma-separated measures (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_measure)]
    measures: Vec<MeasureName>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    experiment: Experiment,

    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// JSON result path.
    #[arg(long)]
    out: PathBuf,

    /// Also write per-row results as CSV (scaling and clipping-curve).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Compressed container.
    compressed: PathBuf,

    /// Output text embedding.
    output: PathBuf,
}

/// Shared state for one invocation.
pub(crate) struct Ctx<'a> {
    pub seed: u64,
    pub format: TextFormat,
    pub out: &'a mut (dyn Write + Send),
}

impl Ctx<'_> {
    pub(crate) fn say(&mut self, line: impl AsRef<str>) {
        // stdout failures (closed pipe) do not change the result files
        let _ = writeln!(self.out, "{}", line.as_ref());
    }
}

fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            let text = e.render().to_string();
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let mut ctx = Ctx {
        seed: cli.seed,
        format: cli.format.into(),
        out,
    };
    let result = match cli.threads {
        None => dispatch(cli.command, &mut ctx),
        Some(t) => match rayon::ThreadPoolBuilder::new()
            .num_threads(t as usize)
            .build()
        {
            Ok(pool) => pool.install(|| dispatch(cli.command, &mut ctx)),
            Err(e) => Err(Error::InvalidArgument(format!("--threads {t}: {e}"))),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(e.kind())
        }
    }
}

fn dispatch(cmd: Command, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        Command::Compress(a) => cmd_compress(a, ctx),
        Command::Measure(a) => cmd_measure(a, ctx),
        Command::Select(a) => cmd_select(a, ctx),
        Command::Evaluate(a) => cmd_evaluate(a, ctx),
        Command::Simulate(a) => {
            simulate::run(a.experiment, &a.config, &a.out, a.csv.as_deref(), ctx)
        }
        Command::Reconstruct(a) => cmd_reconstruct(a, ctx),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn compression_spec(a: &CompressArgs) -> Result<CompressionSpec> {
    let uniform_only = |flag: &str, set: bool| {
        if set && !matches!(a.method, MethodArg::Uniform) {
            Err(usage(format!("{flag} only applies to --method uniform")))
        } else {
            Ok(())
        }
    };
    uniform_only("--rounding", a.rounding.is_some())?;
    uniform_only("--clip-search", a.clip_search.is_some())?;
    if a.keep_v && !matches!(a.method, MethodArg::Pca) {
        return Err(usage("--keep-v only applies to --method pca"));
    }
    match a.method {
        MethodArg::Uniform | MethodArg::Kmeans => {
            if a.dim.is_some() {
                return Err(usage("--dim only applies to --method pca; use --bits"));
            }
            let bits = a
                .bits
                .ok_or_else(|| usage("--bits is required for --method uniform and kmeans"))?;
            Ok(match a.method {
                MethodArg::Kmeans => CompressionSpec::KMeans { bits },
                _ => CompressionSpec::Uniform {
                    bits,
                    rounding: match a.rounding {
                        Some(RoundingArg::Stoch) => Rounding::Stochastic,
                        _ => Rounding::Deterministic,
                    },
                    search: match a.clip_search {
                        Some(ClipSearchArg::Grid) => ClipSearch::Grid {
                            points: DEFAULT_GRID_POINTS,
                        },
                        _ => ClipSearch::Golden {
                            tol: DEFAULT_CLIP_TOL,
                        },
                    },
                },
            })
        }
        MethodArg::Pca => {
            if a.bits.is_some() {
                return Err(usage("--bits does not apply to --method pca; use --dim"));
            }
            let k = a
                .dim
                .ok_or_else(|| usage("--dim is required for --method pca"))?;
            if k == 0 {
                return Err(usage("--dim must be at least 1"));
            }
            Ok(CompressionSpec::Pca {
                k,
                keep_v: a.keep_v,
            })
        }
    }
}

fn describe(c: &CompressedEmbedding) -> String {
    match c.payload() {
        Payload::Uniform { grid, .. } => format!(
            "uniform b={} clip r={} rounding {}",
            grid.bits(),
            grid.clip(),
            match c.rounding() {
                Rounding::Deterministic => "det",
                Rounding::Stochastic => "stoch",
            }
        ),
        Payload::KMeans { codebook, .. } => {
            format!(
                "kmeans b={} ({} centroids)",
                c.bits().unwrap_or(0),
                codebook.len()
            )
        }
        Payload::Pca { basis_v, .. } => format!(
            "pca k={}{}",
            c.output_dim(),
            if basis_v.is_some() { " with V" } else { "" }
        ),
    }
}

fn cmd_compress(a: CompressArgs, ctx: &mut Ctx) -> Result<()> {
    let spec = compression_spec(&a)?;
    let emb = read_text_embedding(&a.input, ctx.format)?;
    let c = compress(emb.matrix(), &spec, ctx.seed)?;
    write_compressed(&a.output, &c, emb.vocab())?;
    ctx.say(format!(
        "input: {} ({} x {})",
        a.input.display(),
        emb.n(),
        emb.d()
    ));
    ctx.say(format!("method: {}", describe(&c)));
    ctx.say(format!("payload_bits: {}", c.payload_bits()));
    ctx.say(format!("compression_rate: {:.4}", c.compression_rate()));
    ctx.say(format!("wrote {}", a.output.display()));
    Ok(())
}

/// A candidate read from disk: a container or a plain text embedding.
struct Candidate {
    id: String,
    path: PathBuf,
    matrix: DenseMatrix,
    compressed: Option<CompressedEmbedding>,
}

fn is_container(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match f.read(&mut head[got..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            k => got += k,
        }
    }
    Ok(got == 4 && head == MAGIC)
}

fn candidate_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_candidates(
    paths: &[PathBuf],
    base_vocab: Option<&Vocabulary>,
    format: TextFormat,
) -> Result<Vec<Candidate>> {
    let mut seen = BTreeMap::new();
    for p in paths {
        let id = candidate_id(p);
        if let Some(prev) = seen.insert(id.clone(), p) {
            return Err(usage(format!(
                "candidates {} and {} share the id {id:?} (ids are file stems)",
                prev.display(),
                p.display()
            )));
        }
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let (matrix, vocab, compressed) = if is_container(p)? {
            let (c, vocab) = read_compressed(p)?;
            (c.decompress()?, vocab, Some(c))
        } else {
            let (m, v) = read_text_embedding(p, format)?.into_parts();
            (m, v, None)
        };
        if let (Some(b), Some(v)) = (base_vocab, vocab.as_ref()) {
            if b != v {
                return Err(Error::InputMismatch(format!(
                    "{}: vocabulary differs from the base embedding (rows must list the same tokens in the same order)",
                    p.display()
                )));
            }
        }
        out.push(Candidate {
            id: candidate_id(p),
            path: p.clone(),
            matrix,
            compressed,
        });
    }
    Ok(out)
}

/// One scored candidate in a `measure` report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasuredCandidate {
    pub candidate_id: String,
    pub path: String,
    pub method: Option<Method>,
    pub bits: Option<u8>,
    pub compression_rate: Option<f64>,
    pub report: QualityReport,
}

/// Body of a `measure` report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureBody {
    pub base: String,
    /// `None` means the default of each report was used.
    pub lambda: Option<f64>,
    pub candidates: Vec<MeasuredCandidate>,
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.6e}"),
        None => "-".into(),
    }
}

fn cmd_measure(a: MeasureArgs, ctx: &mut Ctx) -> Result<()> {
    let names: Vec<MeasureName> = if a.measures.is_empty() {
        MeasureName::ALL.to_vec()
    } else {
        a.measures.clone()
    };
    let base = read_text_embedding(&a.base, ctx.format)?;
    let cands = load_candidates(&a.compressed, base.vocab(), ctx.format)?;
    let mut measured = Vec::with_capacity(cands.len());
    for c in &cands {
        let report = quality_report(base.matrix(), &c.matrix, a.lambda.0).map_err(|e| match e {
            Error::DimensionMismatch { .. } => {
                Error::InputMismatch(format!("{}: {e}", c.path.display()))
            }
            other => other,
        })?;
        measured.push(MeasuredCandidate {
            candidate_id: c.id.clone(),
            path: c.path.display().to_string(),
            method: c.compressed.as_ref().map(|z| z.method()),
            bits: c.compressed.as_ref().and_then(|z| z.bits()),
            compression_rate: c.compressed.as_ref().map(|z| z.compression_rate()),
            report,
        });
    }
    let mut inputs = vec![a.base.clone()];
    inputs.extend(a.compressed.iter().cloned());
    let body = MeasureBody {
        base: a.base.display().to_string(),
        lambda: a.lambda.0,
        candidates: measured,
    };
    write_report(&a.out, REPORT_KIND, &inputs, &body)?;
    let header: Vec<&str> = names.iter().map(|m| m.as_str()).collect();
    ctx.say(format!("candidate\t{}", header.join("\t")));
    for m in &body.candidates {
        let vals: Vec<String> = names
            .iter()
            .map(|n| fmt_value(n.value(&m.report)))
            .collect();
        ctx.say(format!("{}\t{}", m.candidate_id, vals.join("\t")));
        for w in &m.report.warnings {
            ctx.say(format!("warning: {}: {w}", m.candidate_id));
        }
    }
    ctx.say(format!("wrote {}", a.out.display()));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RankedCandidate {
    rank: usize,
    candidate_id: String,
    path: String,
    score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelectBody {
    criterion: MeasureName,
    winner: String,
    ranking: Vec<RankedCandidate>,
    warnings: Vec<String>,
}

fn cmd_select(a: SelectArgs, ctx: &mut Ctx) -> Result<()> {
    let spec = MeasureSpec::new(a.criterion);
    let base = read_text_embedding(&a.base, ctx.format)?;
    let cands = load_candidates(&a.candidates, base.vocab(), ctx.format)?;
    let mats: Vec<DenseMatrix> = cands.iter().map(|c| c.matrix.clone()).collect();
    let sel = select_best_matrices(base.matrix(), &mats, &spec)?;
    // scored candidates best first, ties by input order; unscored last
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&i, &j| match (sel.scores[i], sel.scores[j]) {
        (Some(x), Some(y)) if spec.orientation.prefers(x, y) => std::cmp::Ordering::Less,
        (Some(x), Some(y)) if spec.orientation.prefers(y, x) => std::cmp::Ordering::Greater,
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        _ => i.cmp(&j),
    });
    let ranking: Vec<RankedCandidate> = order
        .iter()
        .enumerate()
        .map(|(r, &i)| RankedCandidate {
            rank: r + 1,
            candidate_id: cands[i].id.clone(),
            path: cands[i].path.display().to_string(),
            score: sel.scores[i],
        })
        .collect();
    ctx.say(format!("criterion: {} ({:?})", spec.name, spec.orientation));
    for r in &ranking {
        ctx.say(format!(
            "{:>3}  {}\t{}",
            r.rank,
            r.candidate_id,
            fmt_value(r.score)
        ));
    }
    for w in &sel.warnings {
        ctx.say(format!("warning: {w}"));
    }
    let winner = &cands[sel.index];
    ctx.say(format!("winner: {} ({})", winner.id, winner.path.display()));
    if let Some(out) = &a.out {
        let mut inputs = vec![a.base.clone()];
        inputs.extend(a.candidates.iter().cloned());
        let body = SelectBody {
            criterion: spec.name,
            winner: winner.id.clone(),
            ranking,
            warnings: sel.warnings.clone(),
        };
        write_report(out, "selection", &inputs, &body)?;
        ctx.say(format!("wrote {}", out.display()));
    }
    Ok(())
}

fn report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_evaluate(a: EvaluateArgs, ctx: &mut Ctx) -> Result<()> {
    let specs: Vec<MeasureSpec> = if a.measures.is_empty() {
        MeasureName::ALL
            .iter()
            .map(|&m| MeasureSpec::new(m))
            .collect()
    } else {
        a.measures.iter().map(|&m| MeasureSpec::new(m)).collect()
    };
    let perf = read_performance_table(&a.perf)?;
    let out_abs = fs::canonicalize(&a.out).ok();
    let mut reports = BTreeMap::new();
    let mut origin: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut used = vec![a.perf.clone()];
    for f in report_files(&a.reports)? {
        if out_abs.is_some() && fs::canonicalize(&f).ok() == out_abs {
            continue;
        }
        let env: Envelope<serde_json::Value> = read_report(&f)?;
        if env.kind != REPORT_KIND {
            ctx.say(format!("skipping {} (kind {:?})", f.display(), env.kind));
            continue;
        }
        let body: MeasureBody = serde_json::from_value(env.body).map_err(|source| Error::Json {
            context: f.display().to_string(),
            source,
        })?;
        for m in body.candidates {
            if let Some(prev) = origin.get(&m.candidate_id) {
                return Err(Error::InputMismatch(format!(
                    "candidate {:?} is reported in both {} and {}",
                    m.candidate_id,
                    prev.display(),
                    f.display()
                )));
            }
            origin.insert(m.candidate_id.clone(), f.clone());
            reports.insert(m.candidate_id, m.report);
        }
        used.push(f);
    }
    if reports.is_empty() {
        return Err(Error::InputMismatch(format!(
            "{}: no {REPORT_KIND} reports found",
            a.reports.display()
        )));
    }
    let tasks = (!a.tasks.is_empty()).then_some(a.tasks.as_slice());
    let summary = evaluate_measures(&reports, &perf, tasks, &specs);
    write_report(&a.out, "evaluation", &used, &summary)?;
    if let Some(csv) = &a.csv {
        write_csv(csv, &summary.rows)?;
    }
    ctx.say("task\tmeasure\tcandidates\tspearman\terror_rate\tmax_regret");
    for r in &summary.rows {
        ctx.say(format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.task,
            r.measure,
            r.candidates,
            fmt_value(r.spearman),
            fmt_value(r.selection_error_rate),
            fmt_value(r.max_regret)
        ));
    }
    for n in &summary.notes {
        ctx.say(format!("note: {n}"));
    }
    ctx.say(format!("wrote {}", a.out.display()));
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs, ctx: &mut Ctx) -> Result<()> {
    let (c, vocab) = read_compressed(&a.compressed)?;
    let m = c.decompress()?;
    write_text_embedding(&a.output, &m, vocab.as_ref())?;
    ctx.say(format!("{}: {}", a.compressed.display(), describe(&c)));
    ctx.say(format!(
        "wrote {} ({} x {})",
        a.output.display(),
        m.rows(),
        m.cols()
    ));
    Ok(())
}
