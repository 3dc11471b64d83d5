use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use xmr_mscm::bench::{run_bench, BenchSpec, Mode};
use xmr_mscm::persist::{load_model, load_queries, save_model, save_queries, write_predictions};
use xmr_mscm::tree::recommend_method;
use xmr_mscm::{
    generate_model, generate_queries, CsrMatrix, GeneratorConfig, InferOptions, IterationMethod,
    Predictor, XmrModel,
};

#[derive(Parser)]
#[command(
    name = "xmr-mscm",
    version,
    about = "Linear XMR tree inference with masked sparse chunk multiplication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic model (and optionally queries).
    Gen(GenArgs),
    /// Load a model and check its invariants.
    Validate(ValidateArgs),
    /// Beam-search inference, TSV output.
    Infer(InferArgs),
    /// Time MSCM against the per-column baseline.
    Bench(BenchArgs),
    /// Print model and chunk statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    depth: usize,
    #[arg(long)]
    branch: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    labels: usize,
    /// Nonzeros per weight column.
    #[arg(long)]
    nnz: usize,
    #[arg(long)]
    overlap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write this many queries to --queries.
    #[arg(long, requires = "queries")]
    num_queries: Option<usize>,
    #[arg(long, default_value_t = 20)]
    query_nnz: usize,
    #[arg(long, requires = "num_queries")]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(value_name = "DIR", required_unless_present = "model")]
    dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "dir")]
    model: Option<PathBuf>,
    /// Also check a query file against the model dimension.
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    March,
    Bsearch,
    Hash,
    Dense,
    Auto,
}

impl MethodArg {
    fn fixed(self) -> Option<IterationMethod> {
        match self {
            MethodArg::March => Some(IterationMethod::MergeJoin),
            MethodArg::Bsearch => Some(IterationMethod::BinarySearch),
            MethodArg::Hash => Some(IterationMethod::HashLookup),
            MethodArg::Dense => Some(IterationMethod::DenseLookup),
            MethodArg::Auto => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchSwitch {
    On,
    Off,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Batch,
    Online,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    mscm: Switch,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Predictions file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Comma-separated; `auto` picks one method from the workload.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Bsearch, MethodArg::Hash])]
    method: Vec<MethodArg>,
    #[arg(long, value_enum, default_value_t = BenchSwitch::Both)]
    mscm: BenchSwitch,
    #[arg(long, value_enum, default_value_t = ModeArg::Batch)]
    mode: ModeArg,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',', default_values_t = [1])]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    measured: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the TSV report here (the table still goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    json: bool,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let r = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Validate(a) => validate(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a),
        Command::Stats(a) => stats(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn gen(a: GenArgs) -> CliResult {
    let cfg = GeneratorConfig {
        depth: a.depth,
        branch: a.branch,
        dim: a.dim,
        labels: a.labels,
        nnz: a.nnz,
        overlap: a.overlap,
        seed: a.seed,
    };
    let model = generate_model(&cfg)?;
    save_model(&model, &a.out)?;
    if let (Some(n), Some(path)) = (a.num_queries, a.queries) {
        let q = generate_queries(n, a.dim, a.query_nnz.min(a.dim), a.seed.wrapping_add(1))?;
        save_queries(&q, &path)?;
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> CliResult {
    let dir = a
        .dir
        .or(a.model)
        .expect("clap enforces one of DIR or --model");
    let model = load_model(&dir)?;
    model.validate()?;
    if let Some(q) = a.queries {
        check_queries(&model, &load_queries(&q)?)?;
    }
    println!(
        "ok: dim {} depth {} labels {}",
        model.dim(),
        model.depth(),
        model.num_labels()
    );
    Ok(())
}

fn check_queries(model: &XmrModel, q: &CsrMatrix) -> xmr_mscm::Result<()> {
    if q.cols() != model.dim() {
        return Err(xmr_mscm::Error::DimensionMismatch {
            expected: model.dim(),
            actual: q.cols(),
        });
    }
    Ok(())
}

fn auto_method(model: &XmrModel, q: &CsrMatrix) -> IterationMethod {
    let mean_nnz = q.nnz() as f64 / q.rows().max(1) as f64;
    let r = recommend_method(&model.stats(), q.rows(), Some(mean_nnz), None);
    eprintln!("method: {} ({})", r.method, r.reason);
    r.method
}

fn infer(a: InferArgs) -> CliResult {
    let mut model = load_model(&a.model)?;
    let q = load_queries(&a.queries)?;
    check_queries(&model, &q)?;
    let method = a.method.fixed().unwrap_or_else(|| auto_method(&model, &q));
    if method == IterationMethod::HashLookup {
        model.build_hash_indices();
    }
    let options = InferOptions {
        beam: a.beam,
        topk: a.topk,
        method,
        mscm: a.mscm == Switch::On,
        workers: a.threads,
    };
    let preds = Predictor::new(&model, options)?.predict(&q)?;
    match a.out {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path)?);
            write_predictions(&preds, &mut out)?;
            out.flush()?;
        }
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            write_predictions(&preds, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let mut model = load_model(&a.model)?;
    let q = load_queries(&a.queries)?;
    check_queries(&model, &q)?;
    let mut methods = Vec::new();
    for m in &a.method {
        let m = m.fixed().unwrap_or_else(|| auto_method(&model, &q));
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.contains(&IterationMethod::HashLookup) {
        model.build_hash_indices();
    }
    let spec = BenchSpec {
        methods,
        mscm: match a.mscm {
            BenchSwitch::On => vec![true],
            BenchSwitch::Off => vec![false],
            BenchSwitch::Both => vec![true, false],
        },
        mode: match a.mode {
            ModeArg::Batch => Mode::Batch,
            ModeArg::Online => Mode::Online,
        },
        beam: a.beam,
        topk: a.topk,
        threads: a.threads,
        warmup: a.warmup,
        measured: a.measured,
        seed: a.seed,
    };
    let report = run_bench(&model, &q, &spec)?;
    if let Some(path) = &a.out {
        std::fs::write(path, report.to_tsv())?;
    }
    let mut out = io::stdout().lock();
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{}", report.to_table())?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> CliResult {
    let model = load_model(&a.model)?;
    print_stats(&model, &a.model, a.json)
}

fn print_stats(model: &XmrModel, dir: &Path, as_json: bool) -> CliResult {
    let ms = model.stats();
    let counts = model.cluster_counts();
    let layers: Vec<_> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let c = l.chunked();
            let s = c.stats();
            let rows: usize = s.rows_per_chunk.iter().sum();
            json!({
                "layer": i + 2,
                "clusters": counts[i + 1],
                "chunks": s.num_chunks,
                "max_width": c.max_width(),
                "nnz": c.nnz(),
                "mean_chunk_rows": rows as f64 / s.num_chunks.max(1) as f64,
                "overlap": s.overlap,
                "shared_fraction": s.shared_fraction,
                "hash_index_entries": s.hash_index_entries,
                "column_index_entries": s.column_index_entries,
            })
        })
        .collect();
    let mut out = io::stdout().lock();
    if as_json {
        let doc = json!({ "model": dir.display().to_string(), "summary": ms, "layers": layers });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        return Ok(());
    }
    writeln!(
        out,
        "dim {}  depth {}  labels {}  nnz {}  chunk rows {} (mean {:.2})",
        ms.dim,
        model.depth(),
        model.num_labels(),
        ms.nnz,
        ms.chunk_rows,
        ms.mean_chunk_rows
    )?;
    writeln!(
        out,
        "layer\tclusters\tchunks\tmax_width\tnnz\tmean_chunk_rows\toverlap\tshared_fraction"
    )?;
    for l in &layers {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.4}\t{:.4}",
            l["layer"],
            l["clusters"],
            l["chunks"],
            l["max_width"],
            l["nnz"],
            l["mean_chunk_rows"].as_f64().unwrap_or(0.0),
            l["overlap"].as_f64().unwrap_or(0.0),
            l["shared_fraction"].as_f64().unwrap_or(0.0),
        )?;
    }
    Ok(())
}
