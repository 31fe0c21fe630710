//! Head-to-head evaluation: train a context-blind S+I model and an
//! S+I-Attention model on the same synthetic data, then print a results
//! table with perplexity and three-trial BLEU on the multi-meaning subset.
//!
//!     cargo run --release --example evaluate_models

use defmod::attention::{pretrain_attention, AttentionPretrainConfig};
use defmod::corpus::Vocabulary;
use defmod::defmodel::{
    train_definitions, Conditioner, ConditioningMode, DefinitionModel, GenerationConfig,
    ModelConfig, TrainConfig,
};
use defmod::evaluate::{eval_trials, make_synthetic, EvalReport, SyntheticPolysemySpec};
use defmod::nn::AdamConfig;
use defmod::skipgram::{train_skipgram, NegSamplingConfig, SkipGramTrainConfig};

fn main() -> defmod::Result<()> {
    let spec = SyntheticPolysemySpec::default_two_sense(21);
    let data = make_synthetic(&spec)?;
    let corpus_vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);
    let vocab = Vocabulary::from_entries(&data.train, 1, None);

    let sampling = NegSamplingConfig {
        window: 3,
        subsample: 0.0,
        ..Default::default()
    };
    let (table, _) = train_skipgram(
        &data.corpus,
        &corpus_vocab,
        &SkipGramTrainConfig {
            dim: 32,
            epochs: 3,
            lr: 0.05,
            sampling: sampling.clone(),
            seed: 21,
        },
    )?;
    let (attn, _) = pretrain_attention(
        &data.corpus,
        &corpus_vocab,
        &AttentionPretrainConfig {
            dim: 32,
            hidden: 32,
            epochs: 3,
            sampling,
            seed: 21,
            ..Default::default()
        },
    )?;

    let train_cfg = TrainConfig {
        epochs: 8,
        batch_size: 16,
        adam: AdamConfig::with_lr(2e-3),
        seed: 21,
        ..Default::default()
    };
    let arch = |mode: ConditioningMode| ModelConfig {
        embed_dim: 32,
        cond_dim: 32,
        hidden: 64,
        layers: 2,
        dropout: 0.3,
        mode,
        seed: 21,
        ..Default::default()
    };

    let mut si = DefinitionModel::new(
        arch(ConditioningMode::SeedInput),
        vocab.clone(),
        Conditioner::input(&table.to_word_vectors(&corpus_vocab), &vocab),
    )?;
    train_definitions(&mut si, &data.train, &data.val, &train_cfg)?;

    let mut att = DefinitionModel::new(
        arch(ConditioningMode::SeedInputAttention),
        vocab.clone(),
        Conditioner::attention(attn, &corpus_vocab, &vocab, false),
    )?;
    train_definitions(&mut att, &data.train, &data.val, &train_cfg)?;

    let gen_cfg = GenerationConfig {
        temperature: 0.1,
        max_len: 16,
        seed: 0,
    };
    let seeds = [1, 2, 3];
    let reports = vec![
        eval_trials(&si, "s+i (2)", "test", &data.test, &seeds, &gen_cfg)?,
        eval_trials(&att, "s+i-attention (2)", "test", &data.test, &seeds, &gen_cfg)?,
    ];
    println!("{}", EvalReport::render_table(&reports));
    println!("{}", reports[1].filter);
    Ok(())
}
