//! Finite-difference verification of every hand-derived backward pass in
//! the crate, from the bare LSTM cell up to the full conditional model.
//!
//!     cargo run --release --example gradient_check

use defmod::attention::AttentionSkipgram;
use defmod::corpus::Vocabulary;
use defmod::defmodel::{Conditioner, ConditioningMode, DefinitionModel, ModelConfig};
use defmod::nn::{grad_check, GradCheckOpts, LstmCell, Parameterized};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randomize<M: Parameterized>(model: &mut M, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.tensors_mut() {
        for v in t.values_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
}

fn main() -> defmod::Result<()> {
    let opts = GradCheckOpts {
        max_coords_per_tensor: 150,
        ..Default::default()
    };

    // bare LSTM cell, loss = sum of the next hidden state
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cell = LstmCell::new("cell", 6, 8, &mut rng);
    randomize(&mut cell, 2);
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.9..0.9)).collect();
    let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cache = cell.forward(&x, &h, &c)?;
    cell.zero_grad();
    cell.backward(&cache, &[1.0; 8], &[0.0; 8]);
    let report = grad_check(&mut cell, |m| m.forward(&x, &h, &c).unwrap().h.iter().sum(), &opts);
    println!(
        "lstm cell: max rel err {:.2e} over {} coordinates",
        report.max_rel_err, report.coords_checked
    );

    // attention skip-gram window loss
    let mut attn = AttentionSkipgram::new(12, 5, 4, 3);
    randomize(&mut attn, 4);
    let window = vec![5, 6, 7];
    let negs = vec![vec![8, 9], vec![10, 8], vec![9, 11]];
    attn.zero_grad();
    attn.window_loss_backward(4, &window, &negs);
    let report = grad_check(
        &mut attn,
        |m| {
            let mut probe = m.clone();
            probe.zero_grad();
            probe.window_loss_backward(4, &window, &negs)
        },
        &opts,
    );
    println!(
        "attention window loss: max rel err {:.2e} over {} coordinates",
        report.max_rel_err, report.coords_checked
    );

    // full conditional model with a fine-tuned attention path
    let names: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build(names.iter().map(|s| s.as_str()), 1, None);
    let attn = AttentionSkipgram::new(vocab.size(), 4, 4, 5);
    let mut model = DefinitionModel::new(
        ModelConfig {
            embed_dim: 5,
            cond_dim: 4,
            hidden: 6,
            layers: 2,
            dropout: 0.0,
            mode: ConditioningMode::SeedInputAttention,
            seed: 6,
            ..Default::default()
        },
        vocab.clone(),
        Conditioner::attention(attn, &vocab, &vocab, true),
    )?;
    randomize(&mut model, 7);
    let head = vocab.id("w0").unwrap();
    let ctx: Vec<usize> = ["w1", "w2"].iter().map(|w| vocab.id(w).unwrap()).collect();
    let def: Vec<usize> = ["w3", "w4", "w2"].iter().map(|w| vocab.id(w).unwrap()).collect();
    model.zero_grad();
    let fwd = model.forward_ids(head, &ctx, &def, false, None)?;
    model.backward(&fwd);
    let report = grad_check(
        &mut model,
        |m| {
            m.forward_ids(head, &ctx, &def, false, None)
                .unwrap()
                .nlls
                .iter()
                .sum()
        },
        &opts,
    );
    println!(
        "conditional definition model: max rel err {:.2e} over {} coordinates (worst: {:?})",
        report.max_rel_err, report.coords_checked, report.worst
    );
    Ok(())
}
