//! Command-line pipeline: data preparation, every trainer, evaluation and
//! generation, driven by flags layered over an optional flat config file
//! (flags win). Every training command writes its resolved configuration
//! next to its checkpoint so a run can be reproduced from the artifact.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adagram::{self, SenseEmbeddings, SviSchedule};
use crate::attention::{pretrain_attention, write_mask_csv, AttentionPretrainConfig, AttentionSkipgram};
use crate::config::{derive_seed, FlatConfig};
use crate::corpus::{self, Vocabulary};
use crate::defmodel::{
    pretrain_unconditional, train_definitions, Conditioner, ConditioningMode, DefinitionModel,
    GenerationConfig, ModelConfig, TrainConfig,
};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalReport, SyntheticPolysemySpec};
use crate::nn::{cosine, AdamConfig};
use crate::skipgram::{train_skipgram, EmbeddingTable, NegSamplingConfig, SkipGramTrainConfig};
use crate::vectors::WordVectors;

#[derive(Parser)]
#[command(
    name = "defmod",
    version,
    about = "Polysemy-aware definition modeling: embeddings, sense disambiguation, attention masks, and definition generation"
)]
struct Cli {
    /// Flat key=value config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed; per-component seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for evaluation trials (training is single-threaded
    /// and deterministic). [default: 1]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary and report dataset statistics.
    Prepare(PrepareArgs),
    /// Generate the synthetic polysemy benchmark.
    Synth(SynthArgs),
    /// Train single-sense skip-gram vectors with negative sampling.
    TrainSkipgram(TrainSkipgramArgs),
    /// Train multi-sense embeddings with stochastic variational inference.
    TrainAdagram(TrainAdagramArgs),
    /// Pretrain the attention block with the masked negative-sampling loss.
    PretrainAttention(PretrainAttentionArgs),
    /// Pretrain an unconditional language model (v* pinned to zero).
    PretrainLm(PretrainLmArgs),
    /// Train a conditional definition model.
    TrainDef(TrainDefArgs),
    /// Perplexity and multi-trial BLEU on a dataset split.
    Eval(EvalArgs),
    /// Sample a definition for a word in context.
    Generate(GenerateArgs),
    /// Report the sense posterior of a word in context.
    Disambiguate(DisambiguateArgs),
    /// Nearest neighbors by cosine over a plain-text vectors file.
    Neighbors(NeighborsArgs),
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Layered option resolution: explicit flag, then config file, then the
/// built-in default. Everything consulted lands in the resolved config.
struct Resolver {
    file: FlatConfig,
    resolved: FlatConfig,
}

impl Resolver {
    fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::new(),
        };
        Ok(Resolver {
            file,
            resolved: FlatConfig::new(),
        })
    }

    fn get<T: FromStr + ToString + Clone>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let value = if let Some(v) = flag {
            v
        } else if let Some(s) = self.file.get(key) {
            s.parse().map_err(|_| {
                Error::Config(format!("config key \"{key}\": cannot parse \"{s}\""))
            })?
        } else {
            default
        };
        self.resolved.set(key, value.to_string());
        Ok(value)
    }

    fn get_flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let value = if flag {
            true
        } else if let Some(s) = self.file.get(key) {
            s.parse()
                .map_err(|_| Error::Config(format!("config key \"{key}\": cannot parse \"{s}\"")))?
        } else {
            false
        };
        self.resolved.set(key, value.to_string());
        Ok(value)
    }

    fn get_path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let value = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(p) = &value {
            self.resolved.set(key, p.display().to_string());
        }
        value
    }

    fn require_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.get_path(key, flag)
            .ok_or_else(|| Error::Config(format!("missing required option --{key}")))
    }

    /// Resolved config written next to a produced artifact.
    fn save_beside(&self, artifact: &Path) -> Result<()> {
        let mut cfg_path = artifact.as_os_str().to_owned();
        cfg_path.push(".cfg");
        self.resolved.save(PathBuf::from(cfg_path))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut r = Resolver::new(cli.config.as_deref())?;
    let seed = r.get("seed", cli.seed, 1u64)?;
    let threads = r.get("threads", cli.threads, 1usize)?;
    match cli.command {
        Command::Prepare(a) => cmd_prepare(a, r),
        Command::Synth(a) => cmd_synth(a, r, seed),
        Command::TrainSkipgram(a) => cmd_train_skipgram(a, r, seed),
        Command::TrainAdagram(a) => cmd_train_adagram(a, r, seed),
        Command::PretrainAttention(a) => cmd_pretrain_attention(a, r, seed),
        Command::PretrainLm(a) => cmd_pretrain_lm(a, r, seed),
        Command::TrainDef(a) => cmd_train_def(a, r, seed),
        Command::Eval(a) => cmd_eval(a, r, seed, threads),
        Command::Generate(a) => cmd_generate(a, r, seed),
        Command::Disambiguate(a) => cmd_disambiguate(a, r),
        Command::Neighbors(a) => cmd_neighbors(a, r),
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// Definitions file (JSON Lines with word/definition/example).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Keep tokens with at least this many occurrences. [default: 1]
    #[arg(long)]
    min_count: Option<u64>,
    /// Cap on non-reserved vocabulary size. [default: unlimited]
    #[arg(long)]
    max_size: Option<usize>,
    /// Vocabulary output path. [default: vocab.txt]
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    /// Also write the statistics report to this JSON file.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

fn cmd_prepare(a: PrepareArgs, mut r: Resolver) -> Result<()> {
    let input = r.require_path("input", a.input)?;
    let min_count = r.get("min_count", a.min_count, 1u64)?;
    let max_size = a.max_size; // optional cap, no default
    let vocab_out = r.get("vocab_out", a.vocab_out.map(p2s), "vocab.txt".to_string())?;

    let entries = corpus::parse_definitions(&input)?;
    let stats = corpus::stats(&entries);
    let vocab = Vocabulary::from_entries(&entries, min_count, max_size);
    vocab.save(&vocab_out)?;

    let report = serde_json::json!({
        "words": stats.words,
        "entries": stats.entries,
        "tokens": stats.tokens,
        "avg_definition_len": stats.avg_definition_len,
        "vocab_size": vocab.size(),
        "vocab_file": vocab_out,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = a.stats_out {
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    println!("{text}");
    Ok(())
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for corpus.txt, splits and labels. [default: synth]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of senses for the pseudoword. [default: 2]
    #[arg(long)]
    senses: Option<usize>,
    /// Dataset entries across all splits. [default: 2000]
    #[arg(long)]
    entries: Option<usize>,
    /// Pretraining corpus sentences. [default: 4000]
    #[arg(long)]
    corpus_sentences: Option<usize>,
    /// Topic words per context sentence. [default: 5]
    #[arg(long)]
    context_len: Option<usize>,
}

fn cmd_synth(a: SynthArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let out_dir = r.get("out_dir", a.out_dir.map(p2s), "synth".to_string())?;
    let senses = r.get("senses", a.senses, 2usize)?;
    let mut spec = SyntheticPolysemySpec::default_n_sense(senses, derive_seed(seed, "synth"));
    spec.entries = r.get("entries", a.entries, spec.entries)?;
    spec.corpus_sentences = r.get("corpus_sentences", a.corpus_sentences, spec.corpus_sentences)?;
    spec.context_len = r.get("context_len", a.context_len, spec.context_len)?;

    let data = evaluate::make_synthetic(&spec)?;
    evaluate::write_synthetic(&data, &spec, &out_dir)?;
    r.resolved.save(Path::new(&out_dir).join("run.cfg"))?;
    println!(
        "wrote {} corpus sentences and {}/{}/{} train/val/test entries to {}",
        data.corpus.len(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out_dir
    );
    Ok(())
}

#[derive(Args)]
struct TrainSkipgramArgs {
    /// Plain-text training corpus, one sentence per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Embedding width. [default: 100]
    #[arg(long)]
    dim: Option<usize>,
    /// Window size. [default: 5]
    #[arg(long)]
    window: Option<usize>,
    /// Negatives per positive. [default: 5]
    #[arg(long)]
    negatives: Option<usize>,
    /// Training epochs. [default: 5]
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate. [default: 0.025]
    #[arg(long)]
    lr: Option<f64>,
    /// Vocabulary min count. [default: 1]
    #[arg(long)]
    min_count: Option<u64>,
    /// Frequent-word subsampling threshold; 0 disables. [default: 1e-5]
    #[arg(long)]
    subsample: Option<f64>,
    /// Output vectors file (plain-text format). [default: vectors.txt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save the corpus vocabulary here.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

fn cmd_train_skipgram(a: TrainSkipgramArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let corpus_path = r.require_path("corpus", a.corpus)?;
    let out = r.get("out", a.out.map(p2s), "vectors.txt".to_string())?;
    let cfg = SkipGramTrainConfig {
        dim: r.get("dim", a.dim, 100)?,
        epochs: r.get("epochs", a.epochs, 5)?,
        lr: r.get("lr", a.lr, 0.025)?,
        sampling: NegSamplingConfig {
            negatives: r.get("negatives", a.negatives, 5)?,
            window: r.get("window", a.window, 5)?,
            noise_power: 0.75,
            subsample: r.get("subsample", a.subsample, 1e-5)?,
        },
        seed: derive_seed(seed, "skipgram"),
    };
    let min_count = r.get("min_count", a.min_count, 1u64)?;

    let sentences = corpus::read_text_corpus(&corpus_path)?;
    let vocab = Vocabulary::build(sentences.iter().flatten().map(|s| s.as_str()), min_count, None);
    let (table, history) = train_skipgram(&sentences, &vocab, &cfg)?;
    for (i, loss) in history.iter().enumerate() {
        println!("epoch {}: mean pair loss {loss:.4}", i + 1);
    }
    table.to_word_vectors(&vocab).save(&out)?;
    if let Some(vp) = r.get_path("vocab_out", a.vocab_out) {
        vocab.save(vp)?;
    }
    r.save_beside(Path::new(&out))?;
    println!("wrote vectors to {out}");
    Ok(())
}

#[derive(Args)]
struct TrainAdagramArgs {
    /// Plain-text training corpus, one sentence per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Sense truncation level K. [default: 5]
    #[arg(long)]
    kmax: Option<usize>,
    /// Dirichlet-process concentration. [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Sense vector width. [default: 100]
    #[arg(long)]
    dim: Option<usize>,
    /// Window size. [default: 5]
    #[arg(long)]
    window: Option<usize>,
    /// SVI epochs. [default: 5]
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate for sense and node vectors. [default: 0.025]
    #[arg(long)]
    vector_lr: Option<f64>,
    /// Minibatch size; 0 selects full-batch coordinate updates. [default: 256]
    #[arg(long)]
    minibatch: Option<usize>,
    /// Vocabulary min count. [default: 1]
    #[arg(long)]
    min_count: Option<u64>,
    /// Initialize senses from these skip-gram vectors.
    #[arg(long)]
    init_vectors: Option<PathBuf>,
    /// Mark senses below this prior probability inactive. [default: 0.05]
    #[arg(long)]
    prune_threshold: Option<f64>,
    /// Model output path. [default: adagram.ckpt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export per-sense vectors ("word#k") to this file.
    #[arg(long)]
    export_vectors: Option<PathBuf>,
}

fn cmd_train_adagram(a: TrainAdagramArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let corpus_path = r.require_path("corpus", a.corpus)?;
    let out = r.get("out", a.out.map(p2s), "adagram.ckpt".to_string())?;
    let kmax = r.get("kmax", a.kmax, 5usize)?;
    let alpha = r.get("alpha", a.alpha, 0.1f64)?;
    let dim = r.get("dim", a.dim, 100usize)?;
    let window = r.get("window", a.window, 5usize)?;
    let epochs = r.get("epochs", a.epochs, 5usize)?;
    let min_count = r.get("min_count", a.min_count, 1u64)?;
    let prune = r.get("prune_threshold", a.prune_threshold, 0.05f64)?;
    let mut sched = SviSchedule {
        vector_lr: r.get("vector_lr", a.vector_lr, 0.025)?,
        minibatch: r.get("minibatch", a.minibatch, 256usize)?,
        ..Default::default()
    };
    if sched.minibatch == 0 {
        sched.line_search = true;
    }

    let sentences = corpus::read_text_corpus(&corpus_path)?;
    let vocab = Vocabulary::build(sentences.iter().flatten().map(|s| s.as_str()), min_count, None);
    let mut model = SenseEmbeddings::new(&vocab, kmax, dim, alpha, derive_seed(seed, "adagram"))?;
    if let Some(vp) = r.get_path("init_vectors", a.init_vectors) {
        let wv = WordVectors::load(vp)?;
        let table = table_from_vectors(&wv, &vocab, derive_seed(seed, "adagram-init"))?;
        model.init_from_skipgram(&table, 0.01, derive_seed(seed, "sense-noise"))?;
    }

    let data = adagram::datapoints_from_sentences(&sentences, &vocab, window);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "svi"));
    for epoch in 0..epochs {
        let elbo = adagram::svi_epoch(&data, &mut model, &mut sched, &mut rng)?;
        println!("epoch {}: ELBO {elbo:.3}", epoch + 1);
    }
    let counts = model.prune_senses(prune);
    let active: usize = counts.iter().sum();
    println!("active senses after pruning at {prune}: {active}");

    model.save_model(&vocab, &r.resolved.render(), &out)?;
    if let Some(ep) = r.get_path("export_vectors", a.export_vectors) {
        model.export_sense_vectors(&vocab, 0.0).save(ep)?;
    }
    r.save_beside(Path::new(&out))?;
    println!("wrote model to {out}");
    Ok(())
}

#[derive(Args)]
struct PretrainAttentionArgs {
    /// Plain-text training corpus, one sentence per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Embedding and mask width. [default: 100]
    #[arg(long)]
    dim: Option<usize>,
    /// Attention network hidden width. [default: dim]
    #[arg(long)]
    hidden: Option<usize>,
    /// Window size. [default: 5]
    #[arg(long)]
    window: Option<usize>,
    /// Negatives per positive. [default: 5]
    #[arg(long)]
    negatives: Option<usize>,
    /// Epochs. [default: 5]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate. [default: 5e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Pairs accumulated per optimizer step. [default: 64]
    #[arg(long)]
    batch_pairs: Option<usize>,
    /// Vocabulary min count. [default: 1]
    #[arg(long)]
    min_count: Option<u64>,
    /// Keep anchor embeddings fixed during pretraining.
    #[arg(long)]
    freeze_embeddings: bool,
    /// Model output path. [default: attention.ckpt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Probe file for mask diagnostics: "word ctx-words..." per line.
    #[arg(long)]
    mask_probes: Option<PathBuf>,
    /// CSV output for mask diagnostics (requires --mask-probes).
    #[arg(long)]
    mask_csv: Option<PathBuf>,
}

fn cmd_pretrain_attention(a: PretrainAttentionArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let corpus_path = r.require_path("corpus", a.corpus)?;
    let out = r.get("out", a.out.map(p2s), "attention.ckpt".to_string())?;
    let dim = r.get("dim", a.dim, 100usize)?;
    let cfg = AttentionPretrainConfig {
        dim,
        hidden: r.get("hidden", a.hidden, dim)?,
        epochs: r.get("epochs", a.epochs, 5)?,
        adam: AdamConfig::with_lr(r.get("lr", a.lr, 5e-3)?),
        sampling: NegSamplingConfig {
            negatives: r.get("negatives", a.negatives, 5)?,
            window: r.get("window", a.window, 5)?,
            noise_power: 0.75,
            subsample: 0.0,
        },
        batch_pairs: r.get("batch_pairs", a.batch_pairs, 64)?,
        freeze_embeddings: r.get_flag("freeze_embeddings", a.freeze_embeddings)?,
        seed: derive_seed(seed, "attention"),
    };
    let min_count = r.get("min_count", a.min_count, 1u64)?;

    let sentences = corpus::read_text_corpus(&corpus_path)?;
    let vocab = Vocabulary::build(sentences.iter().flatten().map(|s| s.as_str()), min_count, None);
    let (model, history) = pretrain_attention(&sentences, &vocab, &cfg)?;
    for (i, loss) in history.iter().enumerate() {
        println!("epoch {}: mean pair loss {loss:.4}", i + 1);
    }
    model.save_model(&vocab, &r.resolved.render(), &out)?;
    r.save_beside(Path::new(&out))?;

    if let Some(probes_path) = r.get_path("mask_probes", a.mask_probes) {
        let csv_path = r
            .get_path("mask_csv", a.mask_csv)
            .ok_or_else(|| Error::Config("--mask-probes requires --mask-csv".into()))?;
        let text = std::fs::read_to_string(&probes_path).map_err(|e| Error::io(&probes_path, e))?;
        let probes: Vec<(String, Vec<String>)> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut toks = corpus::tokenize(l);
                let word = toks.remove(0);
                (word, toks)
            })
            .collect();
        write_mask_csv(&model.block, &vocab, &probes, &csv_path)?;
        println!("wrote mask diagnostics to {}", csv_path.display());
    }
    println!("wrote model to {out}");
    Ok(())
}

#[derive(Args)]
struct PretrainLmArgs {
    /// Plain-text pretraining corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Validation corpus; training corpus is reused when absent.
    #[arg(long)]
    val_corpus: Option<PathBuf>,
    /// Conditioning mode the weights will later serve. [default: s+i-attention]
    #[arg(long)]
    mode: Option<String>,
    /// Token embedding width. [default: 100]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Width of the conditioning vector v*. [default: 100]
    #[arg(long)]
    cond_dim: Option<usize>,
    /// LSTM width. [default: 256]
    #[arg(long)]
    hidden: Option<usize>,
    /// LSTM layers (1-3). [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Dropout between LSTM layers. [default: 0.3]
    #[arg(long)]
    dropout: Option<f64>,
    /// Epochs. [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size. [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate. [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Vocabulary min count. [default: 1]
    #[arg(long)]
    min_count: Option<u64>,
    /// Cap on non-reserved vocabulary size.
    #[arg(long)]
    max_size: Option<usize>,
    /// Initialize token embeddings from this vectors file, then fine-tune.
    #[arg(long)]
    init_embeddings: Option<PathBuf>,
    /// Checkpoint output path. [default: lm.ckpt]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_pretrain_lm(a: PretrainLmArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let corpus_path = r.require_path("corpus", a.corpus)?;
    let out = r.get("out", a.out.map(p2s), "lm.ckpt".to_string())?;
    let mode = ConditioningMode::parse(&r.get("mode", a.mode, "s+i-attention".to_string())?)?;
    let cfg = ModelConfig {
        embed_dim: r.get("embed_dim", a.embed_dim, 100)?,
        cond_dim: r.get("cond_dim", a.cond_dim, 100)?,
        hidden: r.get("hidden", a.hidden, 256)?,
        layers: r.get("layers", a.layers, 2)?,
        dropout: r.get("dropout", a.dropout, 0.3)?,
        mode,
        pretraining: true,
        seed: derive_seed(seed, "lm-init"),
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        epochs: r.get("epochs", a.epochs, 10)?,
        batch_size: r.get("batch_size", a.batch_size, 16)?,
        adam: AdamConfig::with_lr(r.get("lr", a.lr, 1e-3)?),
        seed: derive_seed(seed, "lm-train"),
        ..Default::default()
    };
    let min_count = r.get("min_count", a.min_count, 1u64)?;

    let sentences = corpus::read_text_corpus(&corpus_path)?;
    let val = match r.get_path("val_corpus", a.val_corpus) {
        Some(p) => corpus::read_text_corpus(p)?,
        None => sentences.clone(),
    };
    let vocab = Vocabulary::build(
        sentences.iter().flatten().map(|s| s.as_str()),
        min_count,
        a.max_size,
    );
    let mut model = DefinitionModel::new(cfg, vocab, Conditioner::None)?;
    if let Some(vp) = r.get_path("init_embeddings", a.init_embeddings) {
        model.init_embeddings(&WordVectors::load(vp)?)?;
    }
    let history = pretrain_unconditional(&mut model, &sentences, &val, &train_cfg)?;
    for s in &history {
        println!(
            "epoch {}: train ppl {:.3}, val ppl {:.3}, lr {:.2e}",
            s.epoch, s.train_ppl, s.val_ppl, s.lr
        );
    }
    model.save_model(&r.resolved.render(), None, &out)?;
    r.save_beside(Path::new(&out))?;
    println!("wrote checkpoint to {out}");
    Ok(())
}

#[derive(Args)]
struct TrainDefArgs {
    /// Training split (JSON Lines).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation split (JSON Lines).
    #[arg(long)]
    val: Option<PathBuf>,
    /// Conditioning mode. [default: s+i-attention]
    #[arg(long)]
    mode: Option<String>,
    /// Start from a pretrained unconditional checkpoint.
    #[arg(long)]
    from_lm: Option<PathBuf>,
    /// Plain-text word vectors (required for mode s+i).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// AdaGram checkpoint (for mode s+i-adaptive).
    #[arg(long)]
    adagram: Option<PathBuf>,
    /// Externally trained "word#k" sense vectors, an alternative to
    /// --adagram for mode s+i-adaptive.
    #[arg(long)]
    import_senses: Option<PathBuf>,
    /// Dirichlet-process concentration for imported senses. [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Attention checkpoint (required for mode s+i-attention).
    #[arg(long)]
    attention: Option<PathBuf>,
    /// Token embedding width for fresh models. [default: 100]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// LSTM width for fresh models. [default: 256]
    #[arg(long)]
    hidden: Option<usize>,
    /// LSTM layers (1-3) for fresh models. [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Dropout between LSTM layers. [default: 0.3]
    #[arg(long)]
    dropout: Option<f64>,
    /// Epochs. [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size. [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate. [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Vocabulary min count for fresh models. [default: 1]
    #[arg(long)]
    min_count: Option<u64>,
    /// Fine-tune the attention block end to end.
    #[arg(long)]
    finetune_attention: bool,
    /// Drop the headword from its context before conditioning.
    #[arg(long)]
    exclude_headword: bool,
    /// Checkpoint output path. [default: defmodel.ckpt]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_train_def(a: TrainDefArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let train_path = r.require_path("train", a.train)?;
    let val_path = r.require_path("val", a.val)?;
    let out = r.get("out", a.out.map(p2s), "defmodel.ckpt".to_string())?;
    let mode = ConditioningMode::parse(&r.get("mode", a.mode, "s+i-attention".to_string())?)?;
    let finetune = r.get_flag("finetune_attention", a.finetune_attention)?;
    let exclude_headword = r.get_flag("exclude_headword", a.exclude_headword)?;
    let train_cfg = TrainConfig {
        epochs: r.get("epochs", a.epochs, 10)?,
        batch_size: r.get("batch_size", a.batch_size, 16)?,
        adam: AdamConfig::with_lr(r.get("lr", a.lr, 1e-3)?),
        seed: derive_seed(seed, "def-train"),
        ..Default::default()
    };

    let train_entries = corpus::parse_definitions(&train_path)?;
    let val_entries = corpus::parse_definitions(&val_path)?;

    // Either continue from a pretrained LM (vocabulary travels with it) or
    // build a fresh model over the training data's vocabulary.
    let (mut model, vocab) = match r.get_path("from_lm", a.from_lm) {
        Some(p) => {
            let (model, _, _) = DefinitionModel::load_model(p)?;
            let vocab = model.vocab.clone();
            (model, vocab)
        }
        None => {
            let min_count = r.get("min_count", a.min_count, 1u64)?;
            let vocab = Vocabulary::from_entries(&train_entries, min_count, None);
            let cfg = ModelConfig {
                embed_dim: r.get("embed_dim", a.embed_dim, 100)?,
                cond_dim: 0, // fixed up below from the conditioner
                hidden: r.get("hidden", a.hidden, 256)?,
                layers: r.get("layers", a.layers, 2)?,
                dropout: r.get("dropout", a.dropout, 0.3)?,
                mode,
                pretraining: true,
                seed: derive_seed(seed, "def-init"),
                ..Default::default()
            };
            (DefinitionModel::new(cfg, vocab.clone(), Conditioner::None)?, vocab)
        }
    };

    let conditioner = match mode {
        ConditioningMode::None | ConditioningMode::Seed => Conditioner::None,
        ConditioningMode::SeedInput => {
            let vp = r.require_path("vectors", a.vectors)?;
            Conditioner::input(&WordVectors::load(vp)?, &vocab)
        }
        ConditioningMode::SeedInputAdaptive => {
            if let Some(sp) = r.get_path("import_senses", a.import_senses) {
                let wv = WordVectors::load(sp)?;
                let alpha = r.get("alpha", a.alpha, 0.1f64)?;
                let cond_vocab = vocab_from_sense_tokens(&wv);
                let senses = SenseEmbeddings::import_sense_vectors(&wv, &cond_vocab, alpha)?;
                Conditioner::adaptive(senses, cond_vocab, &vocab)
            } else {
                let ap = r.require_path("adagram", a.adagram)?;
                let (senses, cond_vocab) = SenseEmbeddings::load_model(ap)?;
                Conditioner::adaptive(senses, cond_vocab, &vocab)
            }
        }
        ConditioningMode::SeedInputAttention => {
            let ap = r.require_path("attention", a.attention)?;
            let (attn, cond_vocab) = AttentionSkipgram::load_model(ap)?;
            Conditioner::attention(attn, &cond_vocab, &vocab, finetune)
        }
    };

    // A fresh model was built in pretraining form with cond_dim 0; rebuild
    // with the conditioner's width so layer 0 has the right input size.
    if model.cfg.pretraining && mode.uses_input_vector() {
        let cond_dim = match &conditioner {
            Conditioner::None => 0,
            Conditioner::Input { vectors } => vectors.shape()[1],
            Conditioner::Adaptive { senses, .. } => senses.dim,
            Conditioner::Attention { block, .. } => block.dim,
        };
        if model.cfg.cond_dim != cond_dim {
            let mut cfg = model.cfg.clone();
            cfg.cond_dim = cond_dim;
            cfg.mode = mode;
            model = DefinitionModel::new(cfg, vocab.clone(), Conditioner::None)?;
        }
    }
    model.cfg.mode = mode;
    model.cfg.exclude_headword = exclude_headword;
    model.attach_conditioner(conditioner)?;

    let history = train_definitions(&mut model, &train_entries, &val_entries, &train_cfg)?;
    for s in &history {
        println!(
            "epoch {}: train ppl {:.3}, val ppl {:.3}, lr {:.2e}",
            s.epoch, s.train_ppl, s.val_ppl, s.lr
        );
    }
    model.save_model(&r.resolved.render(), Some(&train_cfg.adam), &out)?;
    r.save_beside(Path::new(&out))?;
    println!("wrote checkpoint to {out}");
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Definition-model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset file; overrides --data-dir/--split.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory holding <split>.jsonl files. [default: .]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Split name. [default: test]
    #[arg(long)]
    split: Option<String>,
    /// Generation trials for BLEU. [default: 3]
    #[arg(long)]
    trials: Option<usize>,
    /// Sampling temperature. [default: 0.1]
    #[arg(long)]
    temperature: Option<f64>,
    /// Maximum generated length. [default: 32]
    #[arg(long)]
    max_len: Option<usize>,
    /// Write the JSON report here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print an aligned Model/PPL/BLEU table.
    #[arg(long)]
    table: bool,
}

fn cmd_eval(a: EvalArgs, mut r: Resolver, seed: u64, threads: usize) -> Result<()> {
    let model_path = r.require_path("model", a.model)?;
    let split = r.get("split", a.split, "test".to_string())?;
    let data_path = match r.get_path("data", a.data) {
        Some(p) => p,
        None => {
            let dir = r.get("data_dir", a.data_dir.map(p2s), ".".to_string())?;
            Path::new(&dir).join(format!("{split}.jsonl"))
        }
    };
    let trials = r.get("trials", a.trials, 3usize)?;
    let gen_cfg = GenerationConfig {
        temperature: r.get("temperature", a.temperature, 0.1)?,
        max_len: r.get("max_len", a.max_len, 32)?,
        seed: 0,
    };

    let (model, _, _) = DefinitionModel::load_model(&model_path)?;
    let dataset = corpus::parse_definitions(&data_path)?;
    let seeds: Vec<u64> = (0..trials as u64).map(|t| derive_seed(seed + t, "trial")).collect();
    let model_id = format!("{} ({})", model.cfg.mode.name(), model.cfg.layers);

    let report = if threads > 1 {
        eval_parallel(&model, &model_id, &split, &dataset, &seeds, &gen_cfg, threads)?
    } else {
        evaluate::eval_trials(&model, &model_id, &split, &dataset, &seeds, &gen_cfg)?
    };

    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = r.get_path("out", a.out) {
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    println!("{text}");
    if a.table {
        print!("{}", EvalReport::render_table(std::slice::from_ref(&report)));
    }
    Ok(())
}

/// Trials spread over scoped threads, merged in seed order so the report is
/// identical to the single-threaded one.
fn eval_parallel(
    model: &DefinitionModel,
    model_id: &str,
    split: &str,
    dataset: &[corpus::DefinitionEntry],
    seeds: &[u64],
    gen_cfg: &GenerationConfig,
    threads: usize,
) -> Result<EvalReport> {
    let ppl = evaluate::perplexity(model, dataset)?;
    let subset = evaluate::multi_meaning_subset(dataset);
    let references: Vec<Vec<String>> = subset.iter().map(|e| e.definition.clone()).collect();

    let mut scores = vec![0.0; seeds.len()];
    let chunk = seeds.len().div_ceil(threads);
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (ci, seed_chunk) in seeds.chunks(chunk).enumerate() {
            let subset = &subset;
            let references = &references;
            handles.push((
                ci,
                scope.spawn(move || -> Result<Vec<f64>> {
                    seed_chunk
                        .iter()
                        .map(|&s| evaluate::trial_bleu(model, subset, references, s, gen_cfg))
                        .collect()
                }),
            ));
        }
        for (ci, handle) in handles {
            let chunk_scores = handle.join().expect("trial thread panicked")?;
            for (i, s) in chunk_scores.into_iter().enumerate() {
                scores[ci * chunk + i] = s;
            }
        }
        Ok(())
    })?;

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / scores.len() as f64;
    Ok(EvalReport {
        model_id: model_id.to_string(),
        split: split.to_string(),
        perplexity: ppl,
        bleu_mean: mean,
        bleu_std: var.sqrt(),
        trials: seeds.len(),
        filter: format!(
            "corpus BLEU-4, add-one smoothing above unigrams, single reference; \
             multi-meaning subset {} of {} entries",
            subset.len(),
            dataset.len()
        ),
    })
}

#[derive(Args)]
struct GenerateArgs {
    /// Definition-model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Word to define.
    #[arg(long)]
    word: Option<String>,
    /// Context sentence (example of use).
    #[arg(long)]
    context: Option<String>,
    /// Sampling temperature. [default: 0.1]
    #[arg(long)]
    temperature: Option<f64>,
    /// Maximum generated length. [default: 32]
    #[arg(long)]
    max_len: Option<usize>,
    /// Append a JSON Lines record (word, context, definition, logprobs).
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

fn cmd_generate(a: GenerateArgs, mut r: Resolver, seed: u64) -> Result<()> {
    let model_path = r.require_path("model", a.model)?;
    let word = r.get("word", a.word, String::new())?.trim().to_lowercase();
    if word.is_empty() {
        return Err(Error::Config("missing required option --word".into()));
    }
    let context = r.get("context", a.context, String::new())?;
    let cfg = GenerationConfig {
        temperature: r.get("temperature", a.temperature, 0.1)?,
        max_len: r.get("max_len", a.max_len, 32)?,
        seed: derive_seed(seed, "generate"),
    };

    let (model, _, _) = DefinitionModel::load_model(&model_path)?;
    let head = model.vocab.id_or_unk(&word);
    let ctx_tokens = corpus::tokenize(&context);
    let ctx = model.vocab.encode(&ctx_tokens, false);
    let gen = model.generate(head, &ctx, &cfg)?;
    let definition = model.vocab.decode(&gen.ids).join(" ");
    println!("{definition}");

    if let Some(path) = r.get_path("jsonl", a.jsonl) {
        let record = serde_json::json!({
            "word": word,
            "context": ctx_tokens.join(" "),
            "definition": definition,
            "logprobs": gen.logprobs,
        });
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{record}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Args)]
struct DisambiguateArgs {
    /// AdaGram checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Word to disambiguate.
    #[arg(long)]
    word: Option<String>,
    /// Context sentence.
    #[arg(long)]
    context: Option<String>,
}

fn cmd_disambiguate(a: DisambiguateArgs, mut r: Resolver) -> Result<()> {
    let model_path = r.require_path("model", a.model)?;
    let word = r.get("word", a.word, String::new())?.trim().to_lowercase();
    if word.is_empty() {
        return Err(Error::Config("missing required option --word".into()));
    }
    let context = r.get("context", a.context, String::new())?;

    let (senses, vocab) = SenseEmbeddings::load_model(&model_path)?;
    let head = vocab.id_or_unk(&word);
    let ctx = vocab.encode(&corpus::tokenize(&context), false);
    let posterior = senses.sense_posterior(head, &ctx);
    let (best, _) = senses.disambiguate(head, &ctx);
    let probs: Vec<String> = posterior
        .probs
        .iter()
        .enumerate()
        .map(|(k, p)| format!("{k}:{p:.4}"))
        .collect();
    println!("{word}\tsense {best}\t{}", probs.join(" "));
    Ok(())
}

#[derive(Args)]
struct NeighborsArgs {
    /// Plain-text vectors file (may hold "word#k" sense rows).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Query token, e.g. "star" or "star#1".
    #[arg(long)]
    word: Option<String>,
    /// Number of neighbors. [default: 10]
    #[arg(long)]
    top: Option<usize>,
}

fn cmd_neighbors(a: NeighborsArgs, mut r: Resolver) -> Result<()> {
    let vectors_path = r.require_path("vectors", a.vectors)?;
    let word = r.get("word", a.word, String::new())?.trim().to_lowercase();
    if word.is_empty() {
        return Err(Error::Config("missing required option --word".into()));
    }
    let top = r.get("top", a.top, 10usize)?;

    let wv = WordVectors::load(&vectors_path)?;
    let query = wv
        .get(&word)
        .or_else(|| wv.get(&format!("{word}#0")))
        .ok_or_else(|| Error::Data(format!("token \"{word}\" not in {}", vectors_path.display())))?;
    if query.iter().all(|x| *x == 0.0) {
        return Err(Error::Data(format!("vector for \"{word}\" is all zeros")));
    }
    let mut scored: Vec<(usize, f64)> = (0..wv.len())
        .filter(|&i| wv.token(i) != word)
        .map(|i| (i, cosine(query, wv.vector(i))))
        .collect();
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    for (i, sim) in scored.into_iter().take(top) {
        println!("{}\t{sim:.4}", wv.token(i));
    }
    Ok(())
}

fn p2s(p: PathBuf) -> String {
    p.display().to_string()
}

/// Vocabulary over the base tokens of a sense-vectors file ("word#k" rows
/// collapse onto "word").
fn vocab_from_sense_tokens(wv: &WordVectors) -> Vocabulary {
    let tokens: Vec<String> = (0..wv.len())
        .map(|i| {
            let t = wv.token(i);
            t.rsplit_once('#').map(|(w, _)| w.to_string()).unwrap_or_else(|| t.to_string())
        })
        .collect();
    Vocabulary::build(tokens.iter().map(|s| s.as_str()), 1, None)
}

/// Embedding table seeded from a vectors file: matching tokens copy their
/// row, everything else keeps the random init.
fn table_from_vectors(wv: &WordVectors, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(vocab.size(), wv.dim, seed);
    for id in 0..vocab.size() {
        if let Some(v) = wv.get(vocab.token(id)) {
            table.in_vecs[id * wv.dim..(id + 1) * wv.dim].copy_from_slice(v);
        }
    }
    Ok(table)
}
