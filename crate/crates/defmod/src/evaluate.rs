//! Evaluation harness: perplexity, corpus BLEU with the multi-meaning
//! filter and multi-trial averaging, and the synthetic polysemy benchmark
//! that makes desk-scale end-to-end checks possible.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::derive_seed;
use crate::corpus::{write_definitions, DefinitionEntry};
use crate::defmodel::{DefinitionModel, GenerationConfig};
use crate::error::{Error, Result};

/// exp(mean per-token negative log likelihood) over the dataset. Counted
/// tokens are the definition tokens plus `<eos>`; the seed step is never
/// scored.
pub fn perplexity(model: &DefinitionModel, dataset: &[DefinitionEntry]) -> Result<f64> {
    let mut total_nll = 0.0;
    let mut tokens = 0usize;
    for entry in dataset {
        let (_, nlls) = model.teacher_forced_logprob(entry)?;
        total_nll += nlls.iter().sum::<f64>();
        tokens += nlls.len();
    }
    if tokens == 0 {
        return Err(Error::Data("perplexity over zero counted tokens".into()));
    }
    Ok((total_nll / tokens as f64).exp())
}

const MAX_NGRAM: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU on a 0..100 scale: clipped modified n-gram precision up
/// to 4-grams, add-one smoothing on the orders above unigram, and the
/// standard brevity penalty. One reference per hypothesis.
pub fn bleu_corpus(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Data("bleu over an empty corpus".into()));
    }

    let mut matched = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, reference) in hypotheses.iter().zip(references.iter()) {
        hyp_len += hyp.len() as u64;
        ref_len += reference.len() as u64;
        for n in 1..=MAX_NGRAM {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hyp, n) {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matched[n - 1] += count.min(clip);
                total[n - 1] += count;
            }
            if hyp.len() >= n {
                // ngram_counts only reports grams present in the hypothesis;
                // totals must still count positions with zero matches.
                let positions = (hyp.len() - n + 1) as u64;
                let counted: u64 = ngram_counts(hyp, n).values().sum();
                debug_assert_eq!(positions, counted);
            }
        }
    }

    if total[0] == 0 {
        return Err(Error::Data("bleu: hypotheses contain no tokens".into()));
    }
    if matched[0] == 0 {
        return Ok(0.0);
    }

    let mut log_precision = (matched[0] as f64 / total[0] as f64).ln();
    for n in 2..=MAX_NGRAM {
        let p = (matched[n - 1] as f64 + 1.0) / (total[n - 1] as f64 + 1.0);
        log_precision += p.ln();
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_precision / MAX_NGRAM as f64).exp())
}

/// Keeps exactly the entries whose headword occurs in two or more entries of
/// the split.
pub fn multi_meaning_subset(dataset: &[DefinitionEntry]) -> Vec<DefinitionEntry> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in dataset {
        *counts.entry(e.headword.as_str()).or_insert(0) += 1;
    }
    dataset
        .iter()
        .filter(|e| counts[e.headword.as_str()] >= 2)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub split: String,
    pub perplexity: f64,
    pub bleu_mean: f64,
    pub bleu_std: f64,
    pub trials: usize,
    pub filter: String,
}

impl EvalReport {
    /// "mean ± std" with two decimals, the shape results tables use.
    pub fn bleu_formatted(&self) -> String {
        format!("{:.2} ± {:.2}", self.bleu_mean, self.bleu_std)
    }

    /// Aligned plain-text table with Model / PPL / BLEU columns.
    pub fn render_table(reports: &[EvalReport]) -> String {
        let mut rows = vec![("Model".to_string(), "PPL".to_string(), "BLEU".to_string())];
        for r in reports {
            rows.push((
                r.model_id.clone(),
                format!("{:.2}", r.perplexity),
                r.bleu_formatted(),
            ));
        }
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap();
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap();
        let mut out = String::new();
        for (a, b, c) in rows {
            out.push_str(&format!("{a:<w0$}  {b:>w1$}  {c}\n"));
        }
        out
    }
}

/// One generation trial: sample a definition for every subset entry (each
/// entry's seed derived from the trial seed) and score corpus BLEU against
/// the gold definitions. Pure over a frozen model, so trials can run on
/// separate threads and merge by seed order.
pub fn trial_bleu(
    model: &DefinitionModel,
    subset: &[DefinitionEntry],
    references: &[Vec<String>],
    seed: u64,
    gen_cfg: &GenerationConfig,
) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let mut hyps = Vec::with_capacity(subset.len());
    for (i, entry) in subset.iter().enumerate() {
        let head = model.vocab.id_or_unk(&entry.headword);
        let ctx = model.vocab.encode(&entry.context, false);
        let cfg = GenerationConfig {
            seed: derive_seed(seed.wrapping_add(i as u64), "generate"),
            ..gen_cfg.clone()
        };
        let gen = model.generate(head, &ctx, &cfg)?;
        hyps.push(model.vocab.decode(&gen.ids));
    }
    bleu_corpus(&hyps, references)
}

/// Generation + BLEU once per trial seed on the multi-meaning subset;
/// perplexity over the full split computed once. Reports mean and population
/// standard deviation across trials.
pub fn eval_trials(
    model: &DefinitionModel,
    model_id: &str,
    split: &str,
    dataset: &[DefinitionEntry],
    seeds: &[u64],
    gen_cfg: &GenerationConfig,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Config("eval needs at least one trial seed".into()));
    }
    let ppl = perplexity(model, dataset)?;
    let subset = multi_meaning_subset(dataset);
    let references: Vec<Vec<String>> = subset.iter().map(|e| e.definition.clone()).collect();

    let mut scores = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        scores.push(trial_bleu(model, &subset, &references, seed, gen_cfg)?);
    }

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

/// Recipe for a synthetic polysemy benchmark: one pseudoword whose meaning
/// is fully determined by which topic vocabulary its context draws from.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticPolysemySpec {
    pub pseudoword: String,
    /// Per-sense topic vocabularies; must be pairwise disjoint.
    pub topics: Vec<Vec<String>>,
    /// Per-sense definition templates.
    pub templates: Vec<Vec<String>>,
    /// Topic words per context sentence (the pseudoword is added on top).
    pub context_len: usize,
    pub entries: usize,
    pub corpus_sentences: usize,
    pub seed: u64,
}

impl SyntheticPolysemySpec {
    /// Two senses, 30-word topic vocabularies, 6-token templates with
    /// disjoint wording, context length 5, 2000 entries.
    pub fn default_two_sense(seed: u64) -> Self {
        let topic = |prefix: &str| -> Vec<String> {
            (0..30).map(|i| format!("{prefix}{i:02}")).collect()
        };
        SyntheticPolysemySpec {
            pseudoword: "blick".to_string(),
            topics: vec![topic("sky"), topic("fame")],
            templates: vec![
                ["a", "bright", "object", "shining", "at", "night"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                ["famous", "person", "admired", "by", "many", "crowds"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ],
            context_len: 5,
            entries: 2000,
            corpus_sentences: 4000,
            seed,
        }
    }

    /// Generalization to `n` senses with auto-generated disjoint topics and
    /// templates.
    pub fn default_n_sense(n: usize, seed: u64) -> Self {
        if n == 2 {
            return Self::default_two_sense(seed);
        }
        let topics = (0..n)
            .map(|s| (0..30).map(|i| format!("s{s}w{i:02}")).collect())
            .collect();
        let templates = (0..n)
            .map(|s| (0..6).map(|i| format!("def{s}tok{i}")).collect())
            .collect();
        SyntheticPolysemySpec {
            pseudoword: "blick".to_string(),
            topics,
            templates,
            context_len: 5,
            entries: 2000,
            corpus_sentences: 4000,
            seed,
        }
    }

    pub fn senses(&self) -> usize {
        self.topics.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.senses() < 2 {
            return Err(Error::Config("synthetic benchmark needs at least 2 senses".into()));
        }
        if self.templates.len() != self.senses() {
            return Err(Error::Config(format!(
                "{} topics but {} templates",
                self.senses(),
                self.templates.len()
            )));
        }
        if self.topics.iter().any(|t| t.is_empty()) || self.templates.iter().any(|t| t.is_empty()) {
            return Err(Error::Config("topics and templates must be non-empty".into()));
        }
        if self.context_len < 1 || self.entries < 1 {
            return Err(Error::Config("context_len and entries must be >= 1".into()));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (s, topic) in self.topics.iter().enumerate() {
            for word in topic {
                if let Some(other) = seen.insert(word.as_str(), s) {
                    return Err(Error::Config(format!(
                        "topic vocabularies overlap: \"{word}\" is in senses {other} and {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A generated benchmark: pretraining sentences, dataset splits, and the
/// ground-truth sense of every entry.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Vec<Vec<String>>,
    pub train: Vec<DefinitionEntry>,
    pub val: Vec<DefinitionEntry>,
    pub test: Vec<DefinitionEntry>,
    pub train_labels: Vec<usize>,
    pub val_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

/// Samples the benchmark: contexts draw `context_len` words from the chosen
/// sense's topic vocabulary with the pseudoword inserted at a random
/// position; definitions are the sense's template verbatim. Splits are
/// 80/10/10 and disjoint.
pub fn make_synthetic(spec: &SyntheticPolysemySpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Context sentences train the embedding models; template-token
    // sentences keep the definition vocabulary inside the pretraining
    // corpus, the way a real corpus contains definition-style prose.
    let mut corpus = Vec::with_capacity(spec.corpus_sentences);
    for i in 0..spec.corpus_sentences {
        let sense = rng.gen_range(0..spec.senses());
        if i % 4 == 3 {
            corpus.push(spec.templates[sense].clone());
        } else {
            corpus.push(context_sentence(spec, sense, &mut rng));
        }
    }

    let mut entries = Vec::with_capacity(spec.entries);
    let mut labels = Vec::with_capacity(spec.entries);
    for _ in 0..spec.entries {
        let sense = rng.gen_range(0..spec.senses());
        entries.push(DefinitionEntry {
            headword: spec.pseudoword.clone(),
            definition: spec.templates[sense].clone(),
            context: context_sentence(spec, sense, &mut rng),
        });
        labels.push(sense);
    }

    let n = entries.len();
    let n_train = (n * 8) / 10;
    let n_val = n / 10;
    let split = |lo: usize, hi: usize| -> (Vec<DefinitionEntry>, Vec<usize>) {
        (entries[lo..hi].to_vec(), labels[lo..hi].to_vec())
    };
    let (train, train_labels) = split(0, n_train);
    let (val, val_labels) = split(n_train, n_train + n_val);
    let (test, test_labels) = split(n_train + n_val, n);

    Ok(SyntheticData {
        corpus,
        train,
        val,
        test,
        train_labels,
        val_labels,
        test_labels,
    })
}

fn context_sentence(spec: &SyntheticPolysemySpec, sense: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let topic = &spec.topics[sense];
    let mut sent: Vec<String> = (0..spec.context_len)
        .map(|_| topic.choose(rng).unwrap().clone())
        .collect();
    let pos = rng.gen_range(0..=sent.len());
    sent.insert(pos, spec.pseudoword.clone());
    sent
}

/// Writes the benchmark to a directory: corpus.txt, {train,val,test}.jsonl,
/// labels.tsv (split, index, sense) and spec.json.
pub fn write_synthetic(data: &SyntheticData, spec: &SyntheticPolysemySpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let corpus_path = dir.join("corpus.txt");
    let text: String = data
        .corpus
        .iter()
        .map(|s| s.join(" "))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&corpus_path, text + "\n").map_err(|e| Error::io(&corpus_path, e))?;

    write_definitions(dir.join("train.jsonl"), &data.train)?;
    write_definitions(dir.join("val.jsonl"), &data.val)?;
    write_definitions(dir.join("test.jsonl"), &data.test)?;

    let mut labels = String::new();
    for (name, ls) in [
        ("train", &data.train_labels),
        ("val", &data.val_labels),
        ("test", &data.test_labels),
    ] {
        for (i, sense) in ls.iter().enumerate() {
            labels.push_str(&format!("{name}\t{i}\t{sense}\n"));
        }
    }
    let labels_path = dir.join("labels.tsv");
    std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;

    let spec_path = dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::defmodel::{ConditioningMode, Conditioner, DefinitionModel, ModelConfig};
    use crate::nn::Parameterized;
    use approx::assert_abs_diff_eq;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn entry(head: &str, def: &[&str], ctx: &[&str]) -> DefinitionEntry {
        DefinitionEntry {
            headword: head.into(),
            definition: toks(def),
            context: toks(ctx),
        }
    }

    fn uniform_model(real_tokens: usize) -> DefinitionModel {
        let names: Vec<String> = (0..real_tokens).map(|i| format!("t{i}")).collect();
        let vocab = Vocabulary::build(names.iter().map(|s| s.as_str()), 1, None);
        let mut model = DefinitionModel::new(
            ModelConfig {
                embed_dim: 3,
                cond_dim: 0,
                hidden: 4,
                layers: 1,
                dropout: 0.0,
                mode: ConditioningMode::Seed,
                seed: 0,
                ..Default::default()
            },
            vocab,
            Conditioner::None,
        )
        .unwrap();
        // zero projection -> exactly uniform next-token distributions
        for t in model.tensors_mut() {
            if t.name().starts_with("proj") {
                t.values_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        model
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let model = uniform_model(96); // |V| = 100 with reserved
        assert_eq!(model.vocab.size(), 100);
        let data = vec![
            entry("t0", &["t1", "t2", "t3"], &["t4"]),
            entry("t5", &["t6"], &["t7"]),
        ];
        let ppl = perplexity(&model, &data).unwrap();
        assert_abs_diff_eq!(ppl, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn perplexity_matches_hand_computation_with_bias_logits() {
        // zero LSTM weights keep the hidden state at zero, so the logits are
        // exactly the projection bias at every step.
        let mut model = uniform_model(2); // tokens t0, t1; |V| = 6
        let bias = [0.0, -1.0, 0.5, 2.0, 1.0, -0.5];
        for t in model.tensors_mut() {
            if t.name() == "proj_b" {
                t.values_mut().copy_from_slice(&bias);
            } else if t.name().starts_with("lstm") {
                t.values_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let t0 = model.vocab.id("t0").unwrap(); // id 4
        let t1 = model.vocab.id("t1").unwrap(); // id 5
        let eos = crate::corpus::EOS;

        // two entries: definitions [t0] and [t1, t1]
        let data = vec![entry("t0", &["t0"], &["t1"]), entry("t1", &["t1", "t1"], &["t0"])];

        // independent accumulation: two-pass with an explicit logsumexp
        let z: f64 = bias.iter().map(|b| b.exp()).sum::<f64>().ln();
        let lp = |id: usize| bias[id] - z;
        let nlls = [
            -lp(t0),
            -lp(eos),
            -lp(t1),
            -lp(t1),
            -lp(eos),
        ];
        let expected = (nlls.iter().sum::<f64>() / nlls.len() as f64).exp();

        let ppl = perplexity(&model, &data).unwrap();
        assert_abs_diff_eq!(ppl, expected, epsilon = 1e-9);
    }

    #[test]
    fn perplexity_streaming_equals_two_pass() {
        let model = uniform_model(6);
        let data = vec![
            entry("t0", &["t1", "t2"], &["t3"]),
            entry("t1", &["t4"], &["t5"]),
            entry("t2", &["t5", "t0", "t1"], &["t2"]),
        ];
        let streaming = perplexity(&model, &data).unwrap();
        let mut all_nlls = Vec::new();
        for e in &data {
            all_nlls.extend(model.teacher_forced_logprob(e).unwrap().1);
        }
        let two_pass = (all_nlls.iter().sum::<f64>() / all_nlls.len() as f64).exp();
        assert_abs_diff_eq!(streaming, two_pass, epsilon = 1e-10);
    }

    #[test]
    fn perplexity_rejects_empty_dataset() {
        let model = uniform_model(4);
        assert!(perplexity(&model, &[]).is_err());
    }

    #[test]
    fn bleu_identity_is_100() {
        let h = vec![toks(&["a", "b", "c", "d", "e"])];
        assert_abs_diff_eq!(bleu_corpus(&h, &h).unwrap(), 100.0, epsilon = 1e-12);
    }

    #[test]
    fn bleu_disjoint_is_0() {
        let h = vec![toks(&["a", "b", "c", "d"])];
        let r = vec![toks(&["x", "y", "z", "w"])];
        assert_eq!(bleu_corpus(&h, &r).unwrap(), 0.0);
    }

    #[test]
    fn bleu_rejects_length_mismatch() {
        let h = vec![toks(&["a"])];
        assert!(bleu_corpus(&h, &[]).is_err());
    }

    #[test]
    fn bleu_is_invariant_to_pair_order() {
        let h1 = vec![
            toks(&["the", "cat", "sat", "on", "the", "mat"]),
            toks(&["a", "dog", "barked", "loudly", "today"]),
            toks(&["green", "ideas", "sleep", "furiously", "tonight"]),
        ];
        let r1 = vec![
            toks(&["the", "cat", "sat", "on", "a", "mat"]),
            toks(&["the", "dog", "barked", "loudly", "yesterday"]),
            toks(&["colorless", "green", "ideas", "sleep", "furiously"]),
        ];
        let fwd = bleu_corpus(&h1, &r1).unwrap();
        let h2: Vec<_> = h1.iter().rev().cloned().collect();
        let r2: Vec<_> = r1.iter().rev().cloned().collect();
        let rev = bleu_corpus(&h2, &r2).unwrap();
        assert_abs_diff_eq!(fwd, rev, epsilon = 1e-12);
    }

    #[test]
    fn bleu_matches_committed_reference_fixtures() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bleu_cases.json");
        let text = std::fs::read_to_string(&path).expect("fixture file");
        let fixture: serde_json::Value = serde_json::from_str(&text).unwrap();
        let pairs = fixture["pairs"].as_array().unwrap();
        assert_eq!(pairs.len(), 20);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for case in pairs {
            let hyp: Vec<String> = case["hyp"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_string())
                .collect();
            let reference: Vec<String> = case["ref"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_string())
                .collect();
            let expected = case["expected"].as_f64().unwrap();
            let got = bleu_corpus(std::slice::from_ref(&hyp), std::slice::from_ref(&reference)).unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-6);
            hyps.push(hyp);
            refs.push(reference);
        }
        let corpus_expected = fixture["corpus_expected"].as_f64().unwrap();
        assert_abs_diff_eq!(bleu_corpus(&hyps, &refs).unwrap(), corpus_expected, epsilon = 1e-6);
    }

    #[test]
    fn multi_meaning_subset_cases() {
        let data = vec![
            entry("star", &["a"], &["x"]),
            entry("star", &["b"], &["y"]),
            entry("dog", &["c"], &["z"]),
        ];
        let sub = multi_meaning_subset(&data);
        assert_eq!(sub.len(), 2);
        assert!(sub.iter().all(|e| e.headword == "star"));

        let unique = vec![entry("a", &["x"], &["y"]), entry("b", &["x"], &["y"])];
        assert!(multi_meaning_subset(&unique).is_empty());

        let all_dup = vec![
            entry("a", &["x"], &["y"]),
            entry("a", &["z"], &["y"]),
            entry("b", &["x"], &["y"]),
            entry("b", &["z"], &["y"]),
        ];
        assert_eq!(multi_meaning_subset(&all_dup), all_dup);

        // idempotence
        assert_eq!(multi_meaning_subset(&sub), sub);
    }

    #[test]
    fn eval_trials_std_and_determinism() {
        let model = uniform_model(8);
        let data = vec![
            entry("t0", &["t1", "t2", "t3", "t4"], &["t5"]),
            entry("t0", &["t2", "t1", "t4", "t3"], &["t6"]),
        ];
        let gen_cfg = GenerationConfig {
            temperature: 1.0,
            max_len: 6,
            seed: 0,
        };
        let one = eval_trials(&model, "m", "test", &data, &[7], &gen_cfg).unwrap();
        assert_eq!(one.trials, 1);
        assert_eq!(one.bleu_std, 0.0);

        let rep = eval_trials(&model, "m", "test", &data, &[7, 7, 7], &gen_cfg).unwrap();
        assert_eq!(rep.bleu_std, 0.0, "identical seeds give identical trials");
        assert_abs_diff_eq!(rep.bleu_mean, one.bleu_mean, epsilon = 1e-12);

        let again = eval_trials(&model, "m", "test", &data, &[7, 7, 7], &gen_cfg).unwrap();
        assert_eq!(rep.bleu_mean.to_bits(), again.bleu_mean.to_bits());

        // report formatting matches the "12.08 ± 0.02" shape
        let formatted = rep.bleu_formatted();
        assert!(formatted.contains(" ± "), "got {formatted}");
    }

    #[test]
    fn synthetic_spec_validation() {
        let mut spec = SyntheticPolysemySpec::default_two_sense(1);
        spec.validate().unwrap();
        spec.topics = vec![spec.topics[0].clone()];
        spec.templates = vec![spec.templates[0].clone()];
        assert!(spec.validate().is_err(), "single sense rejected");

        let mut overlap = SyntheticPolysemySpec::default_two_sense(1);
        overlap.topics[1][0] = overlap.topics[0][0].clone();
        assert!(make_synthetic(&overlap).is_err(), "overlapping topics rejected");
    }

    #[test]
    fn synthetic_is_deterministic_and_label_balanced() {
        let mut spec = SyntheticPolysemySpec::default_two_sense(5);
        spec.entries = 100;
        spec.corpus_sentences = 50;
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test_labels, b.test_labels);

        let ones: usize = a
            .train_labels
            .iter()
            .chain(&a.val_labels)
            .chain(&a.test_labels)
            .filter(|&&l| l == 1)
            .count();
        // binomial 3-sigma bound around 50 of 100
        let sigma = (100.0f64 * 0.25).sqrt();
        assert!((ones as f64 - 50.0).abs() <= 3.0 * sigma, "ones = {ones}");
    }

    #[test]
    fn synthetic_contexts_contain_only_sense_topic_words() {
        let mut spec = SyntheticPolysemySpec::default_two_sense(9);
        spec.entries = 60;
        spec.corpus_sentences = 10;
        let data = make_synthetic(&spec).unwrap();
        for (e, &label) in data.train.iter().zip(data.train_labels.iter()) {
            for word in &e.context {
                assert!(
                    *word == spec.pseudoword || spec.topics[label].contains(word),
                    "context word {word} outside sense-{label} topic"
                );
            }
            assert_eq!(e.definition, spec.templates[label]);
        }
    }

    #[test]
    fn synthetic_split_sizes_are_disjoint_80_10_10() {
        let mut spec = SyntheticPolysemySpec::default_two_sense(2);
        spec.entries = 200;
        spec.corpus_sentences = 10;
        let data = make_synthetic(&spec).unwrap();
        assert_eq!(data.train.len(), 160);
        assert_eq!(data.val.len(), 20);
        assert_eq!(data.test.len(), 20);
        assert_eq!(data.train_labels.len(), 160);
    }
}
