//! Pretrain the attention block and show that the soft mask over the
//! pseudoword's embedding depends on which topic the context comes from.
//!
//!     cargo run --release --example attention_masks

use defmod::attention::{apply_mask, pretrain_attention, AttentionPretrainConfig};
use defmod::corpus::Vocabulary;
use defmod::evaluate::{make_synthetic, SyntheticPolysemySpec};
use defmod::skipgram::NegSamplingConfig;

fn main() -> defmod::Result<()> {
    let mut spec = SyntheticPolysemySpec::default_two_sense(5);
    spec.corpus_sentences = 2000;
    spec.entries = 10;
    let data = make_synthetic(&spec)?;
    let vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);

    let cfg = AttentionPretrainConfig {
        dim: 16,
        hidden: 16,
        epochs: 4,
        sampling: NegSamplingConfig {
            window: 3,
            subsample: 0.0,
            ..Default::default()
        },
        seed: 5,
        ..Default::default()
    };
    let (model, history) = pretrain_attention(&data.corpus, &vocab, &cfg)?;
    println!("per-epoch mean pair loss: {history:?}");

    let ctx_ids = |words: &[&str]| -> Vec<usize> {
        words.iter().map(|w| vocab.id(w).unwrap()).collect()
    };
    let sky = model.block.compute_mask(&ctx_ids(&["sky02", "sky11", "sky23"])).mask;
    let fame = model.block.compute_mask(&ctx_ids(&["fame02", "fame11", "fame23"])).mask;

    let l1: f64 = sky.iter().zip(fame.iter()).map(|(a, b)| (a - b).abs()).sum();
    println!("\nmask (sky context):  {:?}", rounded(&sky));
    println!("mask (fame context): {:?}", rounded(&fame));
    println!("L1 distance between topic masks: {l1:.3}");

    let pseudo = vocab.id(&spec.pseudoword).unwrap();
    let emb = model.word_vecs.row(pseudo);
    let gated_sky = apply_mask(emb, &sky)?;
    let gated_fame = apply_mask(emb, &fame)?;
    let cos = defmod::nn::cosine(&gated_sky, &gated_fame);
    println!("cosine between the two gated conditioning vectors: {cos:.3}");
    Ok(())
}

fn rounded(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 100.0).round() / 100.0).collect()
}
