//! The full pipeline on the synthetic benchmark: pretrain the attention
//! block, train an S+I-Attention definition model, and generate definitions
//! whose content flips with the context's topic.
//!
//!     cargo run --release --example definition_pipeline

use defmod::attention::{pretrain_attention, AttentionPretrainConfig};
use defmod::corpus::Vocabulary;
use defmod::defmodel::{
    train_definitions, Conditioner, ConditioningMode, DefinitionModel, GenerationConfig,
    ModelConfig, TrainConfig,
};
use defmod::evaluate::{make_synthetic, SyntheticPolysemySpec};
use defmod::nn::AdamConfig;
use defmod::skipgram::NegSamplingConfig;

fn main() -> defmod::Result<()> {
    let spec = SyntheticPolysemySpec::default_two_sense(11);
    let data = make_synthetic(&spec)?;
    let corpus_vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);

    println!("pretraining the attention block...");
    let attn_cfg = AttentionPretrainConfig {
        dim: 32,
        hidden: 32,
        epochs: 3,
        sampling: NegSamplingConfig {
            window: 3,
            subsample: 0.0,
            ..Default::default()
        },
        seed: 11,
        ..Default::default()
    };
    let (attn, _) = pretrain_attention(&data.corpus, &corpus_vocab, &attn_cfg)?;

    println!("training the S+I-Attention definition model...");
    let vocab = Vocabulary::from_entries(&data.train, 1, None);
    let mut model = DefinitionModel::new(
        ModelConfig {
            embed_dim: 32,
            cond_dim: 32,
            hidden: 64,
            layers: 2,
            dropout: 0.3,
            mode: ConditioningMode::SeedInputAttention,
            seed: 11,
            ..Default::default()
        },
        vocab.clone(),
        Conditioner::attention(attn, &corpus_vocab, &vocab, false),
    )?;
    let history = train_definitions(
        &mut model,
        &data.train,
        &data.val,
        &TrainConfig {
            epochs: 6,
            batch_size: 16,
            adam: AdamConfig::with_lr(2e-3),
            seed: 11,
            ..Default::default()
        },
    )?;
    for s in &history {
        println!("  epoch {}: val ppl {:.3}", s.epoch, s.val_ppl);
    }

    let pseudo = vocab.id(&spec.pseudoword).unwrap();
    for ctx_words in [
        ["sky04", "sky18", "sky02", "sky11"],
        ["fame04", "fame18", "fame02", "fame11"],
    ] {
        let ctx: Vec<usize> = ctx_words.iter().map(|w| vocab.id_or_unk(w)).collect();
        let gen = model.generate(
            pseudo,
            &ctx,
            &GenerationConfig {
                temperature: 0.1,
                max_len: 16,
                seed: 3,
            },
        )?;
        println!(
            "\n{} in context {:?}\n  -> {}",
            spec.pseudoword,
            ctx_words,
            vocab.decode(&gen.ids).join(" ")
        );
    }
    Ok(())
}
