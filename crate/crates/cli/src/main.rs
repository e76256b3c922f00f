//! `sfi`: train, evaluate, predict, benchmark and analyze the SFI news
//! recommender on MIND-format data, or generate a synthetic dataset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfi_core::dataio::{
    build_train_samples, generate_synthetic, parse_planted, read_behaviors_tsv, read_news_tsv, Corpus, NewsStore,
    Placement, ResolvedImpression, SynthConfig, Vocabulary,
};
use sfi_core::encoder::EncodedCache;
use sfi_core::evalbench::{
    evaluate, informativeness_profile, planted_precision, r_squared, render_profile_svg, run_benchmark,
    score_impressions, threshold_sweep, write_predictions, write_profile_csv, BenchOptions,
};
use sfi_core::model::checkpoint::{self, Checkpoint};
use sfi_core::model::{fit, Adam, ModelConfig, ModelParams, SelectionMode};
use sfi_core::Tensor;

#[derive(Parser)]
#[command(name = "sfi", version, about = "Selective fine-grained interaction news recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model and write a checkpoint plus its vocabulary.
    Train(TrainArgs),
    /// Score labeled impressions and report AUC, MRR and nDCG.
    Eval(EvalArgs),
    /// Write ranked predictions, one impression per line.
    Predict(PredictArgs),
    /// Measure scoring throughput for one or more K.
    Bench(BenchArgs),
    /// Informativeness by history position and a threshold sweep.
    Analyze(AnalyzeArgs),
    /// Generate a seeded planted-interest dataset.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size dimensions.
    Default,
    /// Small dimensions suited to synthetic experiments on a laptop.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Selection {
    Learned,
    Recent,
}

/// Flags mirroring the model config. A `--config` file is applied last and
/// overrides them.
#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// TOML file of `key = value` config entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    title_len: Option<usize>,
    #[arg(long)]
    max_history: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    dilations: Option<Vec<usize>>,
    #[arg(long)]
    kernel_width: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    select_dim: Option<usize>,
    #[arg(long, value_enum)]
    selection: Option<Selection>,
    #[arg(long, value_delimiter = ',')]
    conv3d_channels: Option<Vec<usize>>,
    #[arg(long)]
    conv3d_kernel: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embed_init: Option<f64>,
    #[arg(long)]
    freeze_embeddings: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_train: Option<usize>,
    #[arg(long)]
    batch_predict: Option<usize>,
    #[arg(long)]
    sample_shards: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn resolve(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut c = match self.preset {
            Preset::Default => ModelConfig { vocab_size, ..ModelConfig::default() },
            Preset::Desk => ModelConfig::desk(vocab_size),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        set!(embed_dim, title_len, max_history, dilations, kernel_width, filters, top_k, gamma, select_dim);
        set!(conv3d_channels, conv3d_kernel, negatives, dropout, embed_init, lr, adam_eps, epochs);
        set!(batch_train, batch_predict, sample_shards, seed);
        if let Some(s) = self.selection {
            c.selection = match s {
                Selection::Learned => SelectionMode::Learned,
                Selection::Recent => SelectionMode::Recent,
            };
        }
        c.freeze_embeddings |= self.freeze_embeddings;
        if let Some(path) = &self.config {
            c = c.merge_file(path).with_context(|| format!("reading config {}", path.display()))?;
            c.vocab_size = vocab_size;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
    /// Checkpoint path; the vocabulary is written next to it with a `.vocab` suffix.
    #[arg(long)]
    out: PathBuf,
    /// Optional GloVe-style text file of pretrained word vectors.
    #[arg(long)]
    glove: Option<PathBuf>,
    /// Labeled impressions to report metrics on after each epoch.
    #[arg(long)]
    valid_behaviors: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Selection sizes to measure.
    #[arg(long, value_delimiter = ',', default_value = "5,50")]
    k: Vec<usize>,
    /// Bypass the selector and take the K most recent items.
    #[arg(long)]
    recent: bool,
    /// Measured seconds per K, after the warmup.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = 5.0)]
    warmup: f64,
    /// Scoring threads; throughput with more than one is reported separately.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Cap on the number of impressions in the workload.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2,0,0.1,0.2,0.3,0.5,1")]
    gammas: Vec<f64>,
    /// `planted.tsv` from `synth`; adds the selector's precision on planted items.
    #[arg(long)]
    planted: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_topics: Option<usize>,
    #[arg(long)]
    cluster_size: Option<usize>,
    #[arg(long)]
    min_history: Option<usize>,
    #[arg(long)]
    max_history: Option<usize>,
    #[arg(long)]
    distractor_ratio: Option<f64>,
    #[arg(long)]
    title_len: Option<usize>,
    #[arg(long)]
    shared_tokens: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    /// Put planted items at the most recent positions.
    #[arg(long)]
    front: bool,
}

fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in &vocab.tokens()[2..] {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading vocabulary {}", path.display()))?;
    Ok(Vocabulary::from_tokens(text.lines().map(str::to_string)))
}

fn load_impressions(store: &NewsStore, path: &Path, max_history: usize) -> Result<Vec<ResolvedImpression>> {
    let (imps, stats) = read_behaviors_tsv(path, max_history)?;
    if stats.malformed > 0 {
        eprintln!("{}: skipped {} malformed rows", path.display(), stats.malformed);
    }
    Ok(imps.iter().map(|i| store.resolve(i)).collect())
}

/// Checkpoint, news store and resolved impressions for the read-only commands.
struct Loaded {
    ckpt: Checkpoint,
    store: NewsStore,
    impressions: Vec<ResolvedImpression>,
}

fn load(data: &DataArgs) -> Result<Loaded> {
    let ckpt = checkpoint::load(&data.checkpoint, None)
        .with_context(|| format!("loading checkpoint {}", data.checkpoint.display()))?;
    let vocab = read_vocab(&vocab_path(&data.checkpoint))?;
    if vocab.len() != ckpt.config.vocab_size {
        bail!("vocabulary has {} entries but the checkpoint expects {}", vocab.len(), ckpt.config.vocab_size);
    }
    let (rows, _) = read_news_tsv(&data.news)?;
    let (store, _) = NewsStore::build(&rows, &vocab, ckpt.config.title_len);
    let impressions = load_impressions(&store, &data.behaviors, ckpt.config.max_history)?;
    Ok(Loaded { ckpt, store, impressions })
}

fn cache_for(params: &ModelParams, cfg: &ModelConfig, store: &NewsStore) -> Result<EncodedCache> {
    Ok(EncodedCache::build(&params.encoder, cfg, store.records().iter().enumerate())?)
}

fn train(a: &TrainArgs) -> Result<()> {
    let (rows, news_stats) = read_news_tsv(&a.news)?;
    let probe = a.model.resolve(2)?;
    let corpus = Corpus::from_rows(&rows, probe.title_len);
    let cfg = a.model.resolve(corpus.vocab.len())?;
    eprintln!(
        "news: {} rows ({} malformed, {} duplicate ids), vocabulary {}",
        news_stats.rows,
        news_stats.malformed,
        corpus.duplicates,
        corpus.vocab.len()
    );
    let train = load_impressions(&corpus.store, &a.behaviors, cfg.max_history)?;
    let valid = a.valid_behaviors.as_ref().map(|p| load_impressions(&corpus.store, p, cfg.max_history)).transpose()?;
    let (samples, st) = build_train_samples(&train, cfg.negatives, cfg.seed, cfg.sample_shards);
    eprintln!(
        "samples: {} (skipped {} without negatives, {} unlabeled)",
        st.samples, st.skipped_no_negatives, st.skipped_unlabeled
    );
    if samples.is_empty() {
        bail!("no training samples");
    }
    let mut params = ModelParams::init(&cfg, cfg.seed)?;
    if let Some(g) = &a.glove {
        let n = params.encoder.load_glove(g, &corpus.vocab)?;
        eprintln!("loaded {n} pretrained vectors");
    }
    let mut adam = Adam::new(&params);
    let mut err = None;
    let mut report = |params: &ModelParams, epoch: usize, loss: f64| {
        let mut line = format!("epoch {epoch}: loss {loss:.5}");
        if let Some(v) = &valid {
            let metrics = cache_for(params, &cfg, &corpus.store).and_then(|c| Ok(evaluate(params, &cfg, &c, v)?.1));
            match metrics {
                Ok(m) => line.push_str(&format!(" auc {:.4} mrr {:.4} ndcg10 {:.4}", m.auc, m.mrr, m.ndcg10)),
                Err(e) => err = Some(e),
            }
        }
        eprintln!("{line}");
    };
    if valid.is_some() {
        for e in 0..cfg.epochs {
            let s = sfi_core::model::train_epoch(&mut params, &mut adam, &cfg, &corpus.store, &samples, e)?;
            report(&params, e, s.mean_loss);
        }
    } else {
        fit(&mut params, &mut adam, &cfg, &corpus.store, &samples, |s| {
            eprintln!("epoch {}: loss {:.5}", s.epoch, s.mean_loss)
        })?;
    }
    if let Some(e) = err {
        return Err(e);
    }
    checkpoint::save(&a.out, &cfg, &params, &adam)?;
    write_vocab(&vocab_path(&a.out), &corpus.vocab)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let l = load(&a.data)?;
    let cache = cache_for(&l.ckpt.params, &l.ckpt.config, &l.store)?;
    let (_, m) = evaluate(&l.ckpt.params, &l.ckpt.config, &cache, &l.impressions)?;
    let json = serde_json::to_string_pretty(&m)?;
    println!("{json}");
    if let Some(p) = &a.metrics_out {
        std::fs::write(p, json + "\n")?;
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let l = load(&a.data)?;
    let cache = cache_for(&l.ckpt.params, &l.ckpt.config, &l.store)?;
    let traces = score_impressions(&l.ckpt.params, &l.ckpt.config, &cache, &l.impressions)?;
    let scores: Vec<Vec<f64>> = traces.iter().map(|t| t.iter().map(|s| s.score).collect()).collect();
    let w = BufWriter::new(File::create(&a.out)?);
    write_predictions(w, l.impressions.iter().zip(&scores).map(|(i, s)| (i.impression_id.as_str(), s.as_slice())))?;
    eprintln!("wrote {} impressions to {}", scores.len(), a.out.display());
    Ok(())
}

/// Same shared parameters with a predictor sized for `k`; a new K changes
/// the length of φ, so only the predictor is re-initialized.
fn params_for_k(base: &ModelParams, cfg: &ModelConfig) -> Result<ModelParams> {
    let mut p = base.clone();
    let fresh = ModelParams::init(cfg, cfg.seed)?;
    if p.predictor_weight.shape() != fresh.predictor_weight.shape() {
        p.predictor_weight = fresh.predictor_weight;
        p.predictor_bias = Tensor::zeros(&[1]);
    }
    Ok(p)
}

fn bench(a: &BenchArgs) -> Result<()> {
    let mut l = load(&a.data)?;
    if let Some(n) = a.limit {
        l.impressions.truncate(n);
    }
    let base_cfg = l.ckpt.config.clone();
    let cache = cache_for(&l.ckpt.params, &base_cfg, &l.store)?;
    let opts = BenchOptions {
        warmup: Duration::from_secs_f64(a.warmup),
        duration: Duration::from_secs_f64(a.duration),
        threads: a.threads,
    };
    let mut reports = Vec::new();
    for &k in &a.k {
        let cfg = ModelConfig {
            top_k: k,
            max_history: base_cfg.max_history,
            selection: if a.recent { SelectionMode::Recent } else { SelectionMode::Learned },
            ..base_cfg.clone()
        };
        cfg.validate()?;
        let params = params_for_k(&l.ckpt.params, &cfg)?;
        let r = run_benchmark(&params, &cfg, &cache, &l.impressions, opts)?;
        eprintln!(
            "{}: {:.2} it/s over {} iterations ({:.0} interactor flops per candidate)",
            r.mode, r.iterations_per_second, r.iterations, r.interactor_flops_per_candidate
        );
        reports.push(r);
    }
    let points: Vec<(f64, f64)> = reports.iter().map(|r| (r.k as f64, r.interactor_flops_per_candidate)).collect();
    let out = serde_json::json!({
        "reports": reports,
        "flops_r_squared": if points.len() > 2 { Some(r_squared(&points)) } else { None },
    });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    if let Some(p) = &a.out {
        std::fs::write(p, text + "\n")?;
    }
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let l = load(&a.data)?;
    let cfg = &l.ckpt.config;
    let cache = cache_for(&l.ckpt.params, cfg, &l.store)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let stats = informativeness_profile(&l.ckpt.params, cfg, &cache, &l.impressions)?;
    write_profile_csv(BufWriter::new(File::create(a.out_dir.join("informativeness.csv"))?), &stats)?;
    std::fs::write(a.out_dir.join("informativeness.svg"), render_profile_svg(&stats))?;
    let sweep = threshold_sweep(&l.ckpt.params, cfg, &cache, &l.impressions, &a.gammas)?;
    let rows: Vec<serde_json::Value> = sweep
        .iter()
        .map(|(g, m, active)| serde_json::json!({ "gamma": g, "metrics": m, "active_fraction": active }))
        .collect();
    let text = serde_json::to_string_pretty(&rows)?;
    std::fs::write(a.out_dir.join("threshold_sweep.json"), text + "\n")?;
    if let Some(p) = &a.planted {
        let planted = parse_planted(&std::fs::read_to_string(p)?)?;
        let precision = planted_precision(&l.ckpt.params, cfg, &cache, &l.impressions, &planted)?;
        println!("planted precision at top-{}: {precision:.4}", cfg.top_k);
    }
    eprintln!("wrote informativeness.csv, informativeness.svg and threshold_sweep.json to {}", a.out_dir.display());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut c = SynthConfig::default();
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { c.$f = v; } )* };
    }
    set!(n_train, n_eval, n_users, n_topics, cluster_size, min_history, max_history, distractor_ratio);
    set!(title_len, shared_tokens, negatives);
    if a.front {
        c.placement = Placement::Front;
    }
    let ds = generate_synthetic(&c, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    ds.write_to(&a.out)?;
    eprintln!(
        "wrote {} news, {} train and {} eval impressions to {}",
        ds.news.len(),
        ds.train.len(),
        ds.eval.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
        Command::Bench(a) => bench(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Synth(a) => synth(&a),
    }
}
