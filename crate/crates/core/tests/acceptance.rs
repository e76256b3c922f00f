//! End-to-end acceptance suite. Runs every criterion in sequence on the
//! calling thread (timings must not compete with other tests), prints one
//! PASS/FAIL line per criterion and fails if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfi_core::dataio::{
    build_train_samples, generate_synthetic, Corpus, NewsStore, RawNews, ResolvedImpression, SynthConfig, TrainSample,
    Vocabulary,
};
use sfi_core::encoder::{EncodedCache, Mode};
use sfi_core::evalbench::{
    auc, evaluate, mrr, ndcg_at, planted_precision, r_squared, run_benchmark, score_impressions, BenchOptions,
};
use sfi_core::model::checkpoint;
use sfi_core::model::{
    history_vars, sample_gradient, sampled_softmax_loss, score_cached, score_graph, train_epoch, Adam, ModelConfig,
    ModelParams, NewsVars, SelectionMode,
};
use sfi_core::selector::{hard_select, soft_select};
use sfi_core::{Graph, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

/// Writes past the test harness's output capture so the report is always shown.
fn say(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- shared data

fn tiny_store(cfg: &ModelConfig, n_news: usize, rng: &mut ChaCha8Rng) -> NewsStore {
    let words: Vec<String> = (0..cfg.vocab_size - 2).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_tokens(words.clone());
    let rows: Vec<RawNews> = (0..n_news)
        .map(|i| {
            let len = rng.gen_range(3..=cfg.title_len);
            let title: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
            RawNews { news_id: format!("N{i}"), title: title.join(" "), ..RawNews::default() }
        })
        .collect();
    NewsStore::build(&rows, &vocab, cfg.title_len).0
}

fn tiny_sample(cfg: &ModelConfig, store: &NewsStore, rng: &mut ChaCha8Rng) -> TrainSample {
    let mut ids: Vec<usize> = (1..store.len()).collect();
    ids.shuffle(rng);
    TrainSample {
        impression_id: "g".into(),
        history: ids[..cfg.max_history].to_vec(),
        positive: ids[cfg.max_history],
        negatives: ids[cfg.max_history + 1..cfg.max_history + 1 + cfg.negatives].to_vec(),
    }
}

fn cache(params: &ModelParams, cfg: &ModelConfig, store: &NewsStore) -> EncodedCache {
    EncodedCache::build(&params.encoder, cfg, store.records().iter().enumerate()).unwrap()
}

// ------------------------------------------------------------ 1. gradients

struct GradCheck {
    max_rel: f64,
    worst: String,
    groups: BTreeMap<String, f64>,
    scalars: usize,
}

/// Central differences for every scalar. `None` when some perturbation
/// changes a non-smooth decision, where finite differences are meaningless.
fn finite_difference_check(
    cfg: &ModelConfig,
    store: &NewsStore,
    sample: &TrainSample,
    params: &mut ModelParams,
    h: f64,
) -> Option<GradCheck> {
    let eval = |p: &ModelParams| sample_gradient(p, cfg, store, sample, &mut Mode::Eval).unwrap();
    let base = eval(params);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut out = GradCheck { max_rel: 0.0, worst: String::new(), groups: BTreeMap::new(), scalars: 0 };
    for (t, name) in names.iter().enumerate() {
        for i in 0..params.named()[t].1.numel() {
            let orig = params.named()[t].1.data()[i];
            params.named_mut()[t].1.data_mut()[i] = orig + h;
            let up = eval(params);
            params.named_mut()[t].1.data_mut()[i] = orig - h;
            let down = eval(params);
            params.named_mut()[t].1.data_mut()[i] = orig;
            if up.pattern != base.pattern || down.pattern != base.pattern {
                return None;
            }
            let fd = (up.loss - down.loss) / (2.0 * h);
            let an = base.grads[t][i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            let group = name.split('.').take(2).collect::<Vec<_>>().join(".");
            let e = out.groups.entry(group).or_insert(0.0f64);
            *e = e.max(rel);
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{i}] analytic {an:.3e} fd {fd:.3e}");
            }
            out.scalars += 1;
        }
    }
    Some(out)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig { gamma: 0.2, negatives: 2, ..ModelConfig::tiny() };
    let h = 1e-5;
    // Redraw initialization and inputs until no perturbation crosses a kink
    // and at least one selected item passes the gate.
    let mut rejected = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let store = tiny_store(&cfg, 16, &mut rng);
        let sample = tiny_sample(&cfg, &store, &mut rng);
        let mut params = ModelParams::init(&cfg, seed).unwrap();
        // Zero-initialized biases put every all-zero receptive field exactly
        // on the ReLU kink; a generic point needs nonzero ones.
        for layer in &mut params.encoder.convs {
            for b in layer.bias.data_mut() {
                *b = rng.gen_range(0.05..0.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        let enc = cache(&params, &cfg, &store);
        let tr = score_cached(&params, &cfg, &enc, &sample.history, &[sample.positive]).unwrap();
        if !tr[0].soft_weights.iter().any(|&w| w != 0.0) {
            rejected += 1;
            continue;
        }
        let Some(r) = finite_difference_check(&cfg, &store, &sample, &mut params, h) else {
            rejected += 1;
            continue;
        };
        let secs = start.elapsed().as_secs_f64();
        let per_group: Vec<String> = r.groups.iter().map(|(g, e)| format!("{g} {e:.1e}")).collect();
        return outcome(
            r.max_rel < 1e-4 && secs < 300.0,
            format!(
                "{} scalars ({rejected} draws rejected), max rel err {:.2e} at {}; by group: {}; {secs:.1}s",
                r.scalars,
                r.max_rel,
                r.worst,
                per_group.join(", ")
            ),
        );
    }
    outcome(false, format!("all {rejected} draws cross a kink within ±{h}"))
}

// ------------------------------------------------------------ 2. selection

fn brute_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    // Repeated arg-max; ties go to the earlier (more recent) position.
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out.sort_unstable();
    out
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut gate_errors = 0;
    for trial in 0..1000 {
        let m = rng.gen_range(1..=40);
        let k = rng.gen_range(1..=m);
        // Every fourth vector is drawn from a small grid to force ties.
        let scores: Vec<f64> = (0..m)
            .map(|_| if trial % 4 == 0 { f64::from(rng.gen_range(-3i32..=3)) / 3.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let mut g = Graph::new();
        let s = g.leaf(Tensor::vector(scores.clone()), true);
        let fine: Vec<_> = (0..m).map(|i| Some(g.leaf(Tensor::full(&[1, 1, 1], i as f64), false))).collect();
        let hard = hard_select(&mut g, s, &fine, &[1, 1, 1], k).unwrap();
        let got: Vec<usize> = hard.indices.iter().flatten().copied().collect();
        if got != brute_top_k(&scores, k) {
            mismatches += 1;
        }
        let gamma = rng.gen_range(-1.0..1.0);
        let soft = soft_select(&mut g, hard.selected_scores, hard.selected_fine, gamma).unwrap();
        for (w, &i) in g.value(soft.weights).data().iter().zip(&got) {
            let want = if scores[i] < gamma { 0.0 } else { scores[i] };
            if *w != want {
                gate_errors += 1;
            }
        }
    }
    // The worked example: only the middle entry falls below the threshold.
    let mut g = Graph::new();
    let s = g.leaf(Tensor::vector(vec![0.5, 0.15, 0.25]), false);
    let f = g.leaf(Tensor::zeros(&[3, 1]), false);
    let w = soft_select(&mut g, s, f, 0.2).unwrap().weights;
    let example = g.value(w).data() == [0.5, 0.0, 0.25];
    outcome(
        mismatches == 0 && gate_errors == 0 && example,
        format!("1000 vectors: {mismatches} index-set mismatches, {gate_errors} gating errors, example ok: {example}"),
    )
}

// ------------------------------------------------------------ 3. locality

fn gradient_locality() -> Outcome {
    let cfg = ModelConfig { gamma: -2.0, ..ModelConfig::tiny() };
    let mut worst_fine = 0.0f64;
    let mut min_coarse = f64::INFINITY;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let store = tiny_store(&cfg, 16, &mut rng);
        let sample = tiny_sample(&cfg, &store, &mut rng);
        let params = ModelParams::init(&cfg, seed).unwrap();
        let enc = cache(&params, &cfg, &store);
        let mut g = Graph::new();
        let vars = params.attach(&mut g, true, false);
        // History encodings enter as leaves so their gradients are observable.
        let slots: Vec<Option<NewsVars>> = sample
            .history
            .iter()
            .map(|&h| {
                let e = enc.get(h).unwrap();
                Some(NewsVars { fine: g.leaf(e.fine.clone(), true), coarse: g.leaf(e.coarse.clone(), true) })
            })
            .collect();
        let hv = history_vars(&mut g, &cfg, &slots).unwrap();
        let mut scores = Vec::new();
        let mut selected = vec![false; cfg.max_history];
        for &c in std::iter::once(&sample.positive).chain(&sample.negatives) {
            let e = enc.get(c).unwrap();
            let cv = NewsVars { fine: g.leaf(e.fine.clone(), false), coarse: g.leaf(e.coarse.clone(), false) };
            let sv = score_graph(&mut g, &vars, &cfg, &hv, cv).unwrap();
            for &i in sv.selection.indices.iter().flatten() {
                selected[i] = true;
            }
            scores.push(sv.score);
        }
        let loss = sampled_softmax_loss(&mut g, scores[0], &scores[1..]).unwrap();
        g.backward(loss).unwrap();
        for (i, s) in slots.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let s = s.unwrap();
            let fine = g.grad(s.fine).map_or(0.0, |d| d.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let coarse = g.grad(s.coarse).map_or(0.0, |d| d.iter().map(|v| v * v).sum::<f64>().sqrt());
            worst_fine = worst_fine.max(fine);
            min_coarse = min_coarse.min(coarse);
            checked += 1;
        }
    }
    outcome(
        checked > 0 && worst_fine == 0.0 && min_coarse > 0.0,
        format!("{checked} unselected items: max |dL/dfine| {worst_fine:e}, min ||dL/dcoarse|| {min_coarse:.3e}"),
    )
}

// ------------------------------------------------------------ 4. metrics

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Candidate order by descending score, ties by original index.
fn brute_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    for a in 0..idx.len() {
        for b in 0..idx.len() - 1 - a {
            let (x, y) = (idx[b], idx[b + 1]);
            if scores[y] > scores[x] {
                idx.swap(b, b + 1);
            }
        }
    }
    idx
}

fn brute_mrr(scores: &[f64], labels: &[u8]) -> f64 {
    let order = brute_order(scores);
    let (mut s, mut n) = (0.0, 0.0);
    for (r, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            s += 1.0 / (r + 1) as f64;
            n += 1.0;
        }
    }
    s / n
}

fn brute_ndcg(scores: &[f64], labels: &[u8], k: usize) -> f64 {
    let order = brute_order(scores);
    let mut dcg = 0.0;
    for (r, &i) in order.iter().enumerate().take(k) {
        dcg += (2f64.powi(i32::from(labels[i])) - 1.0) / ((r + 2) as f64).log2();
    }
    let mut ideal: Vec<u8> = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let mut idcg = 0.0;
    for (r, &l) in ideal.iter().enumerate().take(k) {
        idcg += (2f64.powi(i32::from(l)) - 1.0) / ((r + 2) as f64).log2();
    }
    dcg / idcg
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = [0usize; 4];
    for trial in 0..1000 {
        let n = rng.gen_range(2..=30);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        labels[0] = 1;
        labels[1] = 0;
        labels.shuffle(&mut rng);
        let scores: Vec<f64> = (0..n)
            .map(|_| if trial % 3 == 0 { f64::from(rng.gen_range(0..4)) } else { rng.gen_range(-2.0..2.0) })
            .collect();
        bad[0] += usize::from(auc(&scores, &labels) != Some(brute_auc(&scores, &labels)));
        bad[1] += usize::from(mrr(&scores, &labels) != Some(brute_mrr(&scores, &labels)));
        bad[2] += usize::from(ndcg_at(&scores, &labels, 5) != Some(brute_ndcg(&scores, &labels, 5)));
        bad[3] += usize::from(ndcg_at(&scores, &labels, 10) != Some(brute_ndcg(&scores, &labels, 10)));
    }
    outcome(
        bad == [0; 4],
        format!("1000 impressions, mismatches auc {} mrr {} ndcg@5 {} ndcg@10 {}", bad[0], bad[1], bad[2], bad[3]),
    )
}

// ------------------------------------------------------------ 5. planted recovery

struct Trained {
    cfg: ModelConfig,
    params: ModelParams,
}

fn train_on(
    cfg: &ModelConfig,
    store: &NewsStore,
    samples: &[TrainSample],
    log: &mut Vec<String>,
    tag: &str,
) -> Trained {
    let mut params = ModelParams::init(cfg, cfg.seed).unwrap();
    let mut adam = Adam::new(&params);
    for e in 0..cfg.epochs {
        let s = train_epoch(&mut params, &mut adam, cfg, store, samples, e).unwrap();
        log.push(format!("{tag} epoch {e} loss {:.4}", s.mean_loss));
    }
    Trained { cfg: cfg.clone(), params }
}

/// Desk-scale model used for the planted-interest comparison.
fn planted_config(vocab: usize, selection: SelectionMode) -> ModelConfig {
    ModelConfig { selection, top_k: 5, epochs: 5, title_len: 8, ..ModelConfig::desk(vocab) }
}

struct PlantedRun {
    outcome: Outcome,
    sfi: Trained,
    corpus: Corpus,
    train: Vec<ResolvedImpression>,
    eval: Vec<ResolvedImpression>,
}

fn planted_recovery() -> PlantedRun {
    let start = Instant::now();
    let scfg = SynthConfig::default();
    let ds = generate_synthetic(&scfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let corpus = Corpus::from_rows(&ds.news, 8);
    let train = corpus.resolve_all(&ds.train);
    let eval = corpus.resolve_all(&ds.eval);
    let mut log = Vec::new();
    let sfi_cfg = planted_config(corpus.vocab.len(), SelectionMode::Learned);
    let recent_cfg = planted_config(corpus.vocab.len(), SelectionMode::Recent);
    let (samples, _) = build_train_samples(&train, sfi_cfg.negatives, sfi_cfg.seed, sfi_cfg.sample_shards);
    let sfi = train_on(&sfi_cfg, &corpus.store, &samples, &mut log, "SFI(5)");
    let recent = train_on(&recent_cfg, &corpus.store, &samples, &mut log, "Recent(5)");
    let sfi_cache = cache(&sfi.params, &sfi.cfg, &corpus.store);
    let (_, sfi_m) = evaluate(&sfi.params, &sfi.cfg, &sfi_cache, &eval).unwrap();
    let precision = planted_precision(&sfi.params, &sfi.cfg, &sfi_cache, &eval, &ds.planted).unwrap();
    let recent_cache = cache(&recent.params, &recent.cfg, &corpus.store);
    let (_, recent_m) = evaluate(&recent.params, &recent.cfg, &recent_cache, &eval).unwrap();
    let secs = start.elapsed().as_secs_f64();
    for l in &log {
        say(&format!("    {l}"));
    }
    let pass = sfi_m.auc >= recent_m.auc + 0.05 && precision > 0.8 && secs < 1800.0;
    PlantedRun {
        outcome: outcome(
            pass,
            format!(
                "{} train samples; SFI(5) auc {:.4} vs Recent(5) auc {:.4} (gap {:+.4}), top-5 planted precision {:.3}, {secs:.0}s",
                samples.len(),
                sfi_m.auc,
                recent_m.auc,
                sfi_m.auc - recent_m.auc,
                precision
            ),
        ),
        sfi,
        corpus,
        train,
        eval,
    }
}

// ------------------------------------------------------------ 6. efficiency

fn efficiency_scaling() -> Outcome {
    let scfg = SynthConfig { min_history: 50, max_history: 50, n_train: 10, n_eval: 200, ..SynthConfig::default() };
    let ds = generate_synthetic(&scfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let corpus = Corpus::from_rows(&ds.news, 8);
    let eval = corpus.resolve_all(&ds.eval);
    let base = ModelConfig { max_history: 50, top_k: 50, title_len: 8, ..ModelConfig::desk(corpus.vocab.len()) };
    let shared = ModelParams::init(&base, 3).unwrap();
    let enc = cache(&shared, &base, &corpus.store);
    // One frozen encoder and selector for every K; only the predictor is
    // sized to the K-dependent feature length.
    let for_k = |k: usize| {
        let cfg = ModelConfig { top_k: k, ..base.clone() };
        let mut p = shared.clone();
        let fresh = ModelParams::init(&cfg, 3).unwrap();
        p.predictor_weight = fresh.predictor_weight;
        (cfg, p)
    };
    let opts = BenchOptions { warmup: Duration::from_secs(5), duration: Duration::from_secs(30), threads: 1 };
    let mut rates = Vec::new();
    for k in [5, 50] {
        let (cfg, p) = for_k(k);
        rates.push(run_benchmark(&p, &cfg, &enc, &eval, opts).unwrap().iterations_per_second);
    }
    let mut points = Vec::new();
    for k in [5, 10, 25, 50] {
        let (cfg, p) = for_k(k);
        let traces = score_impressions(&p, &cfg, &enc, &eval[..20]).unwrap();
        let flops: Vec<u64> = traces.iter().flatten().map(|t| t.interactor_flops).collect();
        points.push((k as f64, flops.iter().sum::<u64>() as f64 / flops.len() as f64));
    }
    let r2 = r_squared(&points);
    let ratio = rates[0] / rates[1];
    outcome(
        ratio >= 2.5 && r2 > 0.99,
        format!(
            "SFI(5) {:.2} it/s, SFI(50) {:.2} it/s, ratio {ratio:.2}; flops per candidate {:?}, R² {r2:.6}",
            rates[0],
            rates[1],
            points.iter().map(|p| p.1 as u64).collect::<Vec<_>>()
        ),
    )
}

// ------------------------------------------------------------ 7. threshold

fn threshold_behavior(run: &PlantedRun) -> Outcome {
    let enc = cache(&run.sfi.params, &run.sfi.cfg, &run.corpus.store);
    let at = |gamma: f64| {
        let cfg = ModelConfig { gamma, ..run.sfi.cfg.clone() };
        score_impressions(&run.sfi.params, &cfg, &enc, &run.eval).unwrap()
    };
    let high = at(1.0);
    let nonzero_phi = high.iter().flatten().filter(|t| t.phi.iter().any(|&v| v != 0.0)).count();
    let scores: Vec<f64> = high.iter().flatten().map(|t| t.score).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
    let low = at(-2.0);
    let zero_weights = low
        .iter()
        .flatten()
        .flat_map(|t| t.soft_weights.iter().zip(&t.indices))
        .filter(|(w, i)| i.is_some() && **w == 0.0)
        .count();
    let full = low.iter().flatten().all(|t| t.indices.iter().all(Option::is_some));
    outcome(
        nonzero_phi == 0 && std > 0.0 && zero_weights == 0 && full,
        format!(
            "γ=1: {} samples, {nonzero_phi} with nonzero φ, score std {std:.4e}; γ=-2: {zero_weights} zero weights among selected",
            scores.len()
        ),
    )
}

// ------------------------------------------------------------ 8. determinism

fn determinism_and_persistence(run: &PlantedRun) -> Outcome {
    let cfg = ModelConfig { epochs: 1, ..run.sfi.cfg.clone() };
    let train = &run.train[..150];
    let (samples, _) = build_train_samples(train, cfg.negatives, cfg.seed, cfg.sample_shards);
    let mut log = Vec::new();
    let once = || {
        let mut p = ModelParams::init(&cfg, cfg.seed).unwrap();
        let mut adam = Adam::new(&p);
        train_epoch(&mut p, &mut adam, &cfg, &run.corpus.store, &samples, 0).unwrap();
        (checkpoint::to_bytes(&cfg, &p, &adam), p)
    };
    let (a, params) = once();
    let (b, _) = once();
    log.push(format!("{} bytes", a.len()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let enc = cache(&params, &cfg, &run.corpus.store);
    let before = score_impressions(&params, &cfg, &enc, &run.eval).unwrap();
    checkpoint::save(&path, &cfg, &params, &Adam::new(&params)).unwrap();
    let loaded = checkpoint::load(&path, Some(&cfg)).unwrap();
    let enc2 = cache(&loaded.params, &loaded.config, &run.corpus.store);
    let after = score_impressions(&loaded.params, &loaded.config, &enc2, &run.eval).unwrap();
    let bits = |t: &Vec<Vec<sfi_core::model::ScoreTrace>>| -> Vec<u64> {
        t.iter().flatten().map(|s| s.score.to_bits()).collect()
    };
    let identical = a == b;
    let same_scores = bits(&before) == bits(&after);
    outcome(
        identical && same_scores,
        format!(
            "two trainings byte-identical: {identical} ({}); {} reloaded scores bit-identical: {same_scores}",
            log[0],
            bits(&before).len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    // Scoring and training stay on this thread; see the module comment.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    // SFI_ACCEPTANCE=1,2,4 runs a subset; 7 and 8 reuse the model from 5.
    let only: Option<Vec<usize>> =
        std::env::var("SFI_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let lines = pool.install(|| {
        let mut results = Vec::new();
        let mut report = |name: &str, o: Outcome| {
            say(&format!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail));
            results.push((name.to_string(), o.pass));
        };
        if want(1) {
            report("1 gradient correctness", gradient_correctness());
        }
        if want(2) {
            report("2 selection oracle", selection_oracle());
        }
        if want(3) {
            report("3 gradient locality", gradient_locality());
        }
        if want(4) {
            report("4 metric oracles", metric_oracles());
        }
        let planted = (want(5) || want(7) || want(8)).then(planted_recovery);
        if let Some(p) = &planted {
            report("5 planted-interest recovery", outcome(p.outcome.pass, p.outcome.detail.clone()));
        }
        if want(6) {
            report("6 efficiency scaling", efficiency_scaling());
        }
        if let Some(p) = &planted {
            report("7 threshold behavior", threshold_behavior(p));
            report("8 determinism and persistence", determinism_and_persistence(p));
        }
        results
    });
    let failed: Vec<&str> = lines.iter().filter(|(_, p)| !p).map(|(n, _)| n.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
