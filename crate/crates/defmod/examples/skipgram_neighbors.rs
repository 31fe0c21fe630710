//! Train skip-gram vectors on a tiny two-topic corpus and inspect nearest
//! neighbors: words from the same topic should cluster.
//!
//!     cargo run --release --example skipgram_neighbors

use defmod::corpus::Vocabulary;
use defmod::evaluate::{make_synthetic, SyntheticPolysemySpec};
use defmod::skipgram::{nearest_neighbors, train_skipgram, NegSamplingConfig, SkipGramTrainConfig};

fn main() -> defmod::Result<()> {
    let mut spec = SyntheticPolysemySpec::default_two_sense(7);
    spec.corpus_sentences = 1500;
    spec.entries = 10;
    let data = make_synthetic(&spec)?;
    let vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);

    let cfg = SkipGramTrainConfig {
        dim: 32,
        epochs: 3,
        lr: 0.05,
        sampling: NegSamplingConfig {
            window: 3,
            subsample: 0.0,
            ..Default::default()
        },
        seed: 7,
    };
    let (table, history) = train_skipgram(&data.corpus, &vocab, &cfg)?;
    println!("per-epoch mean pair loss: {history:?}");

    for query in ["sky03", "fame12", &spec.pseudoword] {
        let id = vocab.id(query).expect("in vocabulary");
        println!("\nnearest neighbors of {query}:");
        for (nid, cos) in nearest_neighbors(id, &table, 5)? {
            println!("  {:<8} {cos:.3}", vocab.token(nid));
        }
    }
    Ok(())
}
