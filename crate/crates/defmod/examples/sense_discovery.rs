//! Multi-sense embeddings: train AdaGram on a corpus where one pseudoword
//! appears in two disjoint topics, then watch it keep exactly two senses
//! while every topic word keeps one.
//!
//!     cargo run --release --example sense_discovery

use defmod::adagram::{datapoints_from_sentences, svi_epoch, SenseEmbeddings, SviSchedule};
use defmod::corpus::Vocabulary;
use defmod::evaluate::{make_synthetic, SyntheticPolysemySpec};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> defmod::Result<()> {
    let mut spec = SyntheticPolysemySpec::default_two_sense(3);
    spec.corpus_sentences = 2500;
    spec.entries = 10;
    let data = make_synthetic(&spec)?;
    let vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);

    let mut model = SenseEmbeddings::new(&vocab, 4, 32, 0.1, 3)?;
    let points = datapoints_from_sentences(&data.corpus, &vocab, 4);
    let mut sched = SviSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for epoch in 0..10 {
        let elbo = svi_epoch(&points, &mut model, &mut sched, &mut rng)?;
        println!("epoch {:>2}: ELBO {elbo:.1}", epoch + 1);
    }

    model.prune_senses(0.05);
    let pseudo = vocab.id(&spec.pseudoword).unwrap();
    let prior = model.stick_prior(pseudo);
    println!("\nsense priors of \"{}\": {:?}", spec.pseudoword, rounded(&prior));
    let topic_word = vocab.id("sky01").unwrap();
    println!("sense priors of \"sky01\": {:?}", rounded(&model.stick_prior(topic_word)));

    for ctx_words in [["sky04", "sky17", "sky02"], ["fame08", "fame01", "fame20"]] {
        let ctx: Vec<usize> = ctx_words.iter().map(|w| vocab.id(w).unwrap()).collect();
        let post = model.sense_posterior(pseudo, &ctx);
        let (best, _) = model.disambiguate(pseudo, &ctx);
        println!(
            "context {:?} -> sense {best}, posterior {:?}",
            ctx_words,
            rounded(&post.probs)
        );
    }
    Ok(())
}

fn rounded(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
