//! Experiment runner. Subcommands cover the whole pipeline: corpus
//! statistics, embedding-cache preparation, synthetic corpora, single-fold
//! training, cross-validation, the observation-window matrix, and report
//! regeneration from saved provenance.
//!
//! Exit codes: 0 success, 1 usage error, 2 unusable input data, 3 failure
//! during training or persistence of its outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sercnn::corpus::{corpus_stats, load_jsonl, save_jsonl};
use sercnn::embeddings::{
    build_vocab, detect_embedding_dim, init_embedding_matrix, load_cache, parse_embedding_file,
    save_cache, PretrainedEmbedding, StackedEmbedding,
};
use sercnn::harness::{
    evaluate_pairs, generate_synthetic_corpus, kfold_split, run_window_matrix, run_xval,
    train_fold, write_csv, write_json, encode_documents, prepare_documents, ExperimentConfig,
    ExperimentResult, HarnessError, Provenance,
};
use sercnn::{Document, WindowSpec};

#[derive(Parser)]
#[command(name = "sercnn", version, about = "Depression-classification experiments over post histories")]
struct Cli {
    /// JSON experiment config; omitted fields keep their built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cache directory for vocabularies and embedding caches. Overrides
    /// both the config file and SERCNN_CACHE_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,

    /// Experiment seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a JSONL corpus as JSON: user and post counts, label
    /// split, post-count quartiles.
    Stats {
        /// Corpus file, one user per line: {"user_id", "label", "posts"}.
        corpus: PathBuf,
    },

    /// Build a binary stacked-embedding cache covering a corpus
    /// vocabulary, for reuse across runs.
    Prepare {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,

        /// Word-vector text file (.txt or .txt.gz, GloVe layout). Repeat
        /// the flag to stack embeddings from several domains.
        #[arg(long = "embedding", required = true, value_name = "FILE")]
        embeddings: Vec<PathBuf>,

        /// Cache output path. Default: <cache-dir>/stacked.bin.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,

        /// Vocabulary headroom factor over the configured budget, so
        /// per-fold vocabularies stay covered by the cache.
        #[arg(long, default_value_t = 1.2)]
        margin: f64,
    },

    /// Generate a synthetic labeled corpus with a planted lexical signal.
    Synth {
        /// Number of users; even, classes come out balanced.
        #[arg(long)]
        users: usize,

        /// Signal strength in [0, 1]; at 0 the classes are
        /// indistinguishable.
        #[arg(long)]
        signal: f64,

        /// Generator seed.
        #[arg(long)]
        seed: u64,

        /// Fewest posts per user.
        #[arg(long, default_value_t = 20)]
        posts_min: usize,

        /// Most posts per user.
        #[arg(long, default_value_t = 60)]
        posts_max: usize,

        /// Output corpus path (JSONL).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },

    /// Train one model on the first fold's split, report its test
    /// metrics, and save the checkpoint.
    Train {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,

        /// Binary embedding cache from `prepare`.
        #[arg(long, value_name = "FILE")]
        embedding_cache: Option<PathBuf>,

        /// Observation-window size in posts, or `full`.
        #[arg(long, value_enum)]
        window: Option<WindowArg>,

        /// Which end of the history anchors the window.
        #[arg(long, value_enum, requires = "window")]
        anchor: Option<AnchorArg>,

        /// Checkpoint output path.
        #[arg(long, value_name = "FILE", default_value = "sercnn.ckpt")]
        model_out: PathBuf,
    },

    /// 5-fold cross-validation under one observation window; CSV row to
    /// stdout.
    Xval {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,

        /// Binary embedding cache from `prepare`.
        #[arg(long, value_name = "FILE")]
        embedding_cache: Option<PathBuf>,

        /// Observation-window size in posts, or `full`.
        #[arg(long, value_enum)]
        window: Option<WindowArg>,

        /// Which end of the history anchors the window.
        #[arg(long, value_enum, requires = "window")]
        anchor: Option<AnchorArg>,

        /// Also write the CSV table to this file.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,

        /// Write full JSON provenance (config, folds, curves) here.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,

        /// Train folds concurrently. Results are identical either way.
        #[arg(long)]
        parallel: bool,
    },

    /// Every window in the grid (10, 30, 100 at both anchors, plus full)
    /// on identical fold membership; 7 CSV rows to stdout.
    Matrix {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,

        /// Binary embedding cache from `prepare`.
        #[arg(long, value_name = "FILE")]
        embedding_cache: Option<PathBuf>,

        /// Also write the CSV table to this file.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,

        /// Write full JSON provenance here.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,

        /// Train folds concurrently. Results are identical either way.
        #[arg(long)]
        parallel: bool,
    },

    /// Re-emit the CSV table from saved JSON provenance.
    Report {
        /// Provenance file written by `xval --json` or `matrix --json`.
        #[arg(long, value_name = "FILE")]
        json: PathBuf,

        /// CSV output path; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    #[value(name = "10")]
    Ten,
    #[value(name = "30")]
    Thirty,
    #[value(name = "100")]
    Hundred,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    Earliest,
    Latest,
}

fn resolve_window(window: WindowArg, anchor: Option<AnchorArg>) -> WindowSpec {
    let k = match window {
        WindowArg::Ten => 10,
        WindowArg::Thirty => 30,
        WindowArg::Hundred => 100,
        WindowArg::Full => return WindowSpec::Full,
    };
    match anchor.unwrap_or(AnchorArg::Earliest) {
        AnchorArg::Earliest => WindowSpec::Earliest(k),
        AnchorArg::Latest => WindowSpec::Latest(k),
    }
}

/// Failure channel; the variant decides the process exit code.
enum Failure {
    Usage(String),
    Data(String),
    Training(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Training(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Training(m) => m,
        }
    }
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn training(e: impl std::fmt::Display) -> Failure {
    Failure::Training(e.to_string())
}

/// Errors out of a whole experiment run: bad inputs exit 2, failures in
/// the training phase itself exit 3.
fn classify(e: HarnessError) -> Failure {
    match e {
        HarnessError::Corpus(_)
        | HarnessError::Embedding(_)
        | HarnessError::Json(_)
        | HarnessError::Io(_)
        | HarnessError::TooFewUsers { .. }
        | HarnessError::SingleClass
        | HarnessError::EmptyTestSet => data(e),
        HarnessError::InvalidRange(_) => Failure::Usage(e.to_string()),
        _ => training(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // --help and --version land here too; only real parse errors are
        // usage failures.
        Err(err) => {
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = experiment_config(&cli)?;
    match cli.command {
        Command::Stats { corpus } => cmd_stats(&corpus),
        Command::Prepare {
            corpus,
            embeddings,
            out,
            margin,
        } => cmd_prepare(&config, &corpus, &embeddings, out, margin),
        Command::Synth {
            users,
            signal,
            seed,
            posts_min,
            posts_max,
            out,
        } => cmd_synth(users, signal, seed, posts_min, posts_max, &out),
        Command::Train {
            corpus,
            embedding_cache,
            window,
            anchor,
            model_out,
        } => {
            let mut config = config;
            if let Some(w) = window {
                config.window = resolve_window(w, anchor);
            }
            cmd_train(config, &corpus, embedding_cache.as_deref(), &model_out)
        }
        Command::Xval {
            corpus,
            embedding_cache,
            window,
            anchor,
            csv,
            json,
            parallel,
        } => {
            let mut config = config;
            if let Some(w) = window {
                config.window = resolve_window(w, anchor);
            }
            config.parallel_folds |= parallel;
            cmd_xval(config, &corpus, embedding_cache.as_deref(), csv, json)
        }
        Command::Matrix {
            corpus,
            embedding_cache,
            csv,
            json,
            parallel,
        } => {
            let mut config = config;
            config.parallel_folds |= parallel;
            cmd_matrix(config, &corpus, embedding_cache.as_deref(), csv, json)
        }
        Command::Report { json, csv } => cmd_report(&json, csv),
    }
}

/// Config-file values with flag overrides; the cache directory falls back
/// to SERCNN_CACHE_DIR when neither flag nor file names one.
fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| Failure::Data(format!("config {}: {e}", path.display())))?;
            serde_json::from_reader(BufReader::new(file))
                .map_err(|e| Failure::Data(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if config.cache_dir.is_none() {
        config.cache_dir = std::env::var_os("SERCNN_CACHE_DIR").map(PathBuf::from);
    }
    if let Some(dir) = &cli.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_users(corpus: &Path) -> Result<Vec<sercnn::UserRecord>, Failure> {
    load_jsonl(corpus).map_err(|e| Failure::Data(format!("{}: {e}", corpus.display())))
}

fn cmd_stats(corpus: &Path) -> Result<(), Failure> {
    let users = load_users(corpus)?;
    let stats = corpus_stats(&users).map_err(data)?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &stats).map_err(data)?;
    writeln!(stdout).map_err(data)?;
    Ok(())
}

fn cmd_prepare(
    config: &ExperimentConfig,
    corpus: &Path,
    embeddings: &[PathBuf],
    out: Option<PathBuf>,
    margin: f64,
) -> Result<(), Failure> {
    if margin.is_nan() || margin < 1.0 {
        return Err(Failure::Usage(format!(
            "--margin must be at least 1.0, got {margin}"
        )));
    }
    let users = load_users(corpus)?;
    let docs = prepare_documents(&users, WindowSpec::Full, &config.concat).map_err(data)?;
    let budget = (config.model.vocab_size as f64 * margin).ceil() as usize;
    let vocab = build_vocab(&docs, budget).map_err(data)?;

    let mut components = Vec::with_capacity(embeddings.len());
    for path in embeddings {
        let dim = detect_embedding_dim(path)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let emb = parse_embedding_file(path, dim)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        log::info!("{}: {} words x {dim}d", path.display(), emb.len());
        components.push(emb);
    }
    let se = StackedEmbedding::new(components);

    let mut cached = PretrainedEmbedding::new("stacked", se.dim());
    for token in vocab.tokens().iter().skip(2) {
        if se.in_union(token) {
            cached.insert(token, &se.lookup(token));
        }
    }

    let out = out.unwrap_or_else(|| {
        config
            .cache_dir
            .clone()
            .unwrap_or_default()
            .join("stacked.bin")
    });
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(data)?;
        }
    }
    save_cache(&out, &cached).map_err(data)?;
    println!(
        "cached {} of {} vocabulary tokens at {}d into {}",
        cached.len(),
        vocab.len(),
        se.dim(),
        out.display()
    );
    Ok(())
}

fn cmd_synth(
    users: usize,
    signal: f64,
    seed: u64,
    posts_min: usize,
    posts_max: usize,
    out: &Path,
) -> Result<(), Failure> {
    let corpus =
        generate_synthetic_corpus(users, posts_min..=posts_max, signal, seed).map_err(classify)?;
    save_jsonl(out, &corpus).map_err(data)?;
    println!("wrote {} users to {}", corpus.len(), out.display());
    Ok(())
}

fn load_stack(cache: Option<&Path>) -> Result<Option<StackedEmbedding>, Failure> {
    match cache {
        Some(path) => {
            let emb = load_cache(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            Ok(Some(StackedEmbedding::new(vec![emb])))
        }
        None => Ok(None),
    }
}

fn cmd_train(
    config: ExperimentConfig,
    corpus: &Path,
    cache: Option<&Path>,
    model_out: &Path,
) -> Result<(), Failure> {
    let users = load_users(corpus)?;
    let docs = prepare_documents(&users, config.window, &config.concat).map_err(classify)?;
    let labels: Vec<u8> = docs.iter().map(|d| d.label).collect();
    let plan = kfold_split(&labels, config.folds, config.seed).map_err(classify)?;
    let fold = &plan.folds[0];
    let se = load_stack(cache)?;

    let pick = |ids: &[usize]| -> Vec<&Document> { ids.iter().map(|&i| &docs[i]).collect() };
    let vocab = build_vocab(&pick(&fold.train), config.model.vocab_size).map_err(data)?;
    let embedding = se
        .as_ref()
        .map(|se| init_embedding_matrix(&vocab, se, config.seed));
    let mut model_config = config.model.clone();
    model_config.vocab_size = vocab.len();
    // The embedding width is whatever the stacked components add up to.
    if let Some(se) = &se {
        model_config.embed_dim = se.dim();
    }

    let train = encode_documents(&pick(&fold.train), &vocab);
    let val = encode_documents(&pick(&fold.val), &vocab);
    let test = encode_documents(&pick(&fold.test), &vocab);

    let outcome = train_fold(
        model_config,
        embedding,
        &train,
        &val,
        &config.train,
        config.seed,
    )
    .map_err(classify)?;

    let mut pairs = Vec::with_capacity(test.len());
    for doc in &test {
        let (pred, _) = outcome.model.predict(&doc.ids).map_err(training)?;
        pairs.push((doc.label, pred));
    }
    let metrics = evaluate_pairs(&pairs).map_err(classify)?;
    outcome.model.save(model_out).map_err(training)?;

    let summary = serde_json::json!({
        "window": config.window.label(),
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": outcome.best_val_accuracy,
        "test": metrics,
        "parameters": outcome.model.count_parameters(),
        "vocabulary": vocab.len(),
        "checkpoint": model_out.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(training)?);
    Ok(())
}

fn emit_results(
    results: &[ExperimentResult],
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut stdout = std::io::stdout().lock();
    write_csv(results, &mut stdout).map_err(data)?;
    if let Some(path) = csv {
        let mut file = BufWriter::new(File::create(&path).map_err(data)?);
        write_csv(results, &mut file).map_err(data)?;
        file.flush().map_err(data)?;
    }
    if let Some(path) = json {
        let provenance = Provenance::new(results.to_vec());
        let mut file = BufWriter::new(File::create(&path).map_err(data)?);
        write_json(&provenance, &mut file).map_err(data)?;
        file.flush().map_err(data)?;
    }
    Ok(())
}

fn cmd_xval(
    config: ExperimentConfig,
    corpus: &Path,
    cache: Option<&Path>,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
) -> Result<(), Failure> {
    let users = load_users(corpus)?;
    let se = load_stack(cache)?;
    let result = run_xval(&users, se.as_ref(), &config).map_err(classify)?;
    emit_results(std::slice::from_ref(&result), csv, json)
}

fn cmd_matrix(
    config: ExperimentConfig,
    corpus: &Path,
    cache: Option<&Path>,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
) -> Result<(), Failure> {
    let users = load_users(corpus)?;
    let se = load_stack(cache)?;
    let results = run_window_matrix(&users, se.as_ref(), &config).map_err(classify)?;
    emit_results(&results, csv, json)
}

fn cmd_report(json: &Path, csv: Option<PathBuf>) -> Result<(), Failure> {
    let file = File::open(json).map_err(|e| Failure::Data(format!("{}: {e}", json.display())))?;
    let provenance: Provenance = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::Data(format!("{}: {e}", json.display())))?;
    if provenance.results.is_empty() {
        return Err(Failure::Data(format!(
            "{}: provenance contains no results",
            json.display()
        )));
    }
    match csv {
        Some(path) => {
            let mut file = BufWriter::new(File::create(&path).map_err(data)?);
            write_csv(&provenance.results, &mut file).map_err(data)?;
            file.flush().map_err(data)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_csv(&provenance.results, &mut stdout).map_err(data)?;
        }
    }
    Ok(())
}
