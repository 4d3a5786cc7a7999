use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use taghash::config::RunConfig;
use taghash::dataio::{
    split_dataset, write_dense_matrix, write_sparse_binary, DenseFormat, SparseBinaryMatrix,
};
use taghash::error::ErrorKind;
use taghash::eval::{mean_average_precision, pr_curve, run_ablation_suite, write_ablation_csv, write_pr_csv, RelevanceJudge};
use taghash::pipeline::{sub_seed, train_model, Stage};
use taghash::{dataio, Error, HammingIndex, HashModel, PackedCodes, Result, Variant};

/// Learn, apply and evaluate binary hash codes for tagged collections.
#[derive(Parser)]
#[command(name = "taghash", version)]
struct Cli {
    /// Configuration file (`key = value`; `include = @mir` pulls in a preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model variant: full, no_direct, no_indirect, no_tags, no_denoise, relaxed.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Code length r.
    #[arg(long, global = true)]
    bits: Option<usize>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (synth, train, evaluate, ablate) or file (encode, query).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic tagged dataset.
    Synth,
    /// Train a hash model and write it with a training report and the split.
    Train,
    /// Encode a feature matrix into packed codes.
    Encode(EncodeArgs),
    /// Rank database codes for each query.
    Query(QueryArgs),
    /// Score query codes against database codes with MAP and a PR curve.
    Evaluate(EvaluateArgs),
    /// Train and score every variant / seed / code-length combination.
    Ablate,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature matrix, one column per sample (`.csv` or binary).
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    /// Database codes.
    #[arg(long)]
    db: PathBuf,
    /// Query codes.
    #[arg(long, conflicts_with = "query_features")]
    queries: Option<PathBuf>,
    /// Raw query features, encoded with `--model`.
    #[arg(long, requires = "model")]
    query_features: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Hits per query.
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    db_labels: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    /// Cut the ranking at k for MAP@k (default: full ranking).
    #[arg(long)]
    k: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("cannot size the thread pool: {e}")))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.variant {
        cfg.params_mut().variant = v;
    }
    if let Some(r) = cli.bits {
        cfg.params_mut().bits = r;
    }
    if let Some(seed) = cli.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth => synth(&cfg),
        Command::Train => train(&cfg),
        Command::Encode(args) => encode(&cfg, args, cli.out.as_deref()),
        Command::Query(args) => query(args, cli.out.as_deref()),
        Command::Evaluate(args) => evaluate(&cfg, args),
        Command::Ablate => ablate(&cfg),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn config_json(cfg: &RunConfig) -> Value {
    Value::Object(
        cfg.resolved()
            .into_iter()
            .map(|(k, v)| (k.to_string(), Value::String(v)))
            .collect::<Map<_, _>>(),
    )
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let ds = dataio::generate_synthetic(&cfg.synth_config())?;
    fs::create_dir_all(&cfg.out)?;
    write_dense_matrix(&cfg.out.join("features.dmat"), &ds.features, DenseFormat::Binary)?;
    write_sparse_binary(&cfg.out.join("tags.txt"), &ds.tags)?;
    if let Some(labels) = &ds.labels {
        write_sparse_binary(&cfg.out.join("labels.txt"), labels)?;
    }
    println!("wrote {} samples to {}", ds.len(), cfg.out.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let ds = cfg.dataset()?;
    let p = &cfg.pipeline;
    let split = split_dataset(&ds, p.train_n, p.query_n, sub_seed(p.seed, Stage::Split))?;
    let tags = cfg.needs_tags().then_some(&split.train.tags);
    let trained = train_model(&split.train.features, tags, p)?;
    let result = &trained.result;

    let out = &cfg.out;
    fs::create_dir_all(out)?;
    trained.model.write(&out.join("model.hmod"))?;
    write_dense_matrix(&out.join("retrieval_features.dmat"), &split.retrieval.features, DenseFormat::Binary)?;
    write_dense_matrix(&out.join("query_features.dmat"), &split.query.features, DenseFormat::Binary)?;
    let write_labels = |name: &str, l: &Option<SparseBinaryMatrix>| -> Result<()> {
        match l {
            Some(l) => write_sparse_binary(&out.join(name), l),
            None => Ok(()),
        }
    };
    write_labels("retrieval_labels.txt", &split.retrieval.labels)?;
    write_labels("query_labels.txt", &split.query.labels)?;
    write_json(
        &out.join("split.json"),
        &json!({
            "train": split.train_idx,
            "retrieval": split.retrieval_idx,
            "query": split.query_idx,
        }),
    )?;

    let t = &trained.timings;
    let report = json!({
        "variant": p.params.variant.name(),
        "bits": p.params.bits,
        "iterations": result.iters_used,
        "converged": result.converged,
        "objective_history": result.objective_history,
        "timings_secs": {
            "anchor_graph": t.anchor_graph_secs,
            "hypergraph": t.hypergraph_secs,
            "optimize": t.optimize_secs,
            "train_total": t.total(),
            "wall": started.elapsed().as_secs_f64(),
        },
        "samples": {
            "train": split.train_idx.len(),
            "retrieval": split.retrieval_idx.len(),
            "query": split.query_idx.len(),
        },
        "config": config_json(cfg),
    });
    write_json(&out.join("report.json"), &report)?;
    println!(
        "trained {} ({} bits) in {} iterations{}; model at {}",
        p.params.variant,
        p.params.bits,
        result.iters_used,
        if result.converged { "" } else { " (not converged)" },
        out.join("model.hmod").display()
    );
    Ok(())
}

fn load_features(path: &Path) -> Result<taghash::DenseMatrix> {
    dataio::load_dense_matrix(path, DenseFormat::from_path(path))
}

fn encode(cfg: &RunConfig, args: &EncodeArgs, out: Option<&Path>) -> Result<()> {
    let model = HashModel::read(&args.model)?;
    let codes = model.encode(&load_features(&args.features)?)?;
    let path = out.map_or_else(|| cfg.out.join("codes.hcod"), Path::to_path_buf);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    codes.write(&path)?;
    println!("encoded {} samples into {}", codes.len(), path.display());
    Ok(())
}

fn query(args: &QueryArgs, out: Option<&Path>) -> Result<()> {
    let index = HammingIndex::with_positions(PackedCodes::read(&args.db)?);
    let queries = match (&args.queries, &args.query_features, &args.model) {
        (Some(q), _, _) => PackedCodes::read(q)?,
        (None, Some(f), Some(m)) => HashModel::read(m)?.encode(&load_features(f)?)?,
        _ => return Err(Error::InvalidConfig("give --queries, or --query-features with --model".into())),
    };
    if queries.bits() != index.bits() {
        return Err(Error::DimensionMismatch(format!(
            "query codes have {} bits, database {}",
            queries.bits(),
            index.bits()
        )));
    }
    let mut w: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(w, "query\trank\tid\tdistance")?;
    for q in 0..queries.len() {
        for (rank, hit) in index.query(queries.code(q), args.k)?.iter().enumerate() {
            writeln!(w, "{q}\t{}\t{}\t{}", rank + 1, hit.id, hit.distance)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let db = PackedCodes::read(&args.db)?;
    let queries = PackedCodes::read(&args.queries)?;
    let db_labels = dataio::load_sparse_binary(&args.db_labels)?;
    let query_labels = dataio::load_sparse_binary(&args.query_labels)?;
    for (what, codes, labels) in [("database", &db, &db_labels), ("query", &queries, &query_labels)] {
        if codes.len() != labels.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{what} has {} codes but {} label columns",
                codes.len(),
                labels.cols()
            )));
        }
    }
    let index = HammingIndex::with_positions(db);
    let judge = RelevanceJudge::new(&query_labels, &db_labels);
    let report = mean_average_precision(&index, &queries, &judge, args.k)?;
    let curve = pr_curve(&index, &queries, &judge)?;

    fs::create_dir_all(&cfg.out)?;
    let mut w = BufWriter::new(File::create(cfg.out.join("pr.csv"))?);
    write_pr_csv(&mut w, &curve)?;
    w.flush()?;
    write_json(
        &cfg.out.join("metrics.json"),
        &json!({
            "map": report.map,
            "cutoff": args.k,
            "queries": report.per_query.len(),
            "queries_without_relevant": report.no_relevant,
            "per_query_ap": report.per_query,
        }),
    )?;
    if report.no_relevant > 0 {
        log::warn!("{} queries have no relevant database item and score 0", report.no_relevant);
    }
    println!("MAP {:.6}", report.map);
    Ok(())
}

fn ablate(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.dataset()?;
    let bits = if cfg.ablation_bits.is_empty() {
        vec![cfg.params().bits]
    } else {
        cfg.ablation_bits.clone()
    };
    let rows = run_ablation_suite(&ds, &cfg.pipeline, &cfg.ablation_variants, &bits, &cfg.ablation_seeds)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("ablation.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    write_ablation_csv(&mut w, &rows)?;
    w.flush()?;
    for &variant in &cfg.ablation_variants {
        for &r in &bits {
            let maps: Vec<f64> = rows
                .iter()
                .filter(|row| row.variant == variant && row.bits == r)
                .map(|row| row.map)
                .collect();
            println!("{variant:<12} r={r:<3} mean MAP {:.4}", maps.iter().sum::<f64>() / maps.len() as f64);
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
