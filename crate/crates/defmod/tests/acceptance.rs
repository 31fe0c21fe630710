//! Acceptance suite: normalization identities, finite-difference gradient
//! checks, factorization and decoding oracles, ELBO monotonicity with an
//! independent evaluator, and the directional end-to-end comparisons on the
//! synthetic polysemy benchmark. Run with `--nocapture` to see one PASS/FAIL
//! line per criterion.

use defmod::adagram::{
    self, datapoints_from_sentences, SenseDatapoint, SenseEmbeddings, SviSchedule,
};
use defmod::attention::{pretrain_attention, AttentionPretrainConfig, AttentionSkipgram};
use defmod::corpus::{DefinitionEntry, Vocabulary, EOS, RESERVED};
use defmod::defmodel::{
    train_definitions, Conditioner, ConditioningMode, DefinitionModel, GenerationConfig,
    ModelConfig, TrainConfig,
};
use defmod::evaluate::{
    bleu_corpus, make_synthetic, multi_meaning_subset, perplexity, trial_bleu,
    SyntheticPolysemySpec,
};
use defmod::nn::{
    grad_check, softmax_inplace, softmax_xent, AdamConfig, GradCheckOpts, LstmCell,
    ParamTensor, Parameterized, TensorSet,
};
use defmod::skipgram::{hsoftmax_backward, hsoftmax_logprob, sgns_loss_grad, HuffmanTree};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {name} failed: {detail}");
}

fn words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

fn vocab_of(n: usize) -> Vocabulary {
    let w = words(n);
    Vocabulary::build(w.iter().map(|s| s.as_str()), 1, None)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_normalization_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);

    // softmax sums to 1 within 1e-12
    let mut worst_softmax = 0.0f64;
    for _ in 0..100 {
        let mut xs: Vec<f64> = (0..rng.gen_range(2..40))
            .map(|_| rng.gen_range(-30.0..30.0))
            .collect();
        softmax_inplace(&mut xs);
        worst_softmax = worst_softmax.max((xs.iter().sum::<f64>() - 1.0).abs());
    }

    // Huffman leaf probabilities sum to 1 for 100 random parameterizations
    let counts = [13, 7, 7, 5, 2, 1, 1];
    let stream: Vec<String> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat(format!("w{i}")).take(c))
        .collect();
    let vocab = Vocabulary::build(stream.iter().map(|s| s.as_str()), 1, None);
    let tree = HuffmanTree::build(&vocab).unwrap();
    let dim = 5;
    let mut worst_leaf = 0.0f64;
    for _ in 0..100 {
        let node_vecs: Vec<f64> = (0..tree.n_inner() * dim)
            .map(|_| rng.gen_range(-4.0..4.0))
            .collect();
        let rep: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let total: f64 = tree
            .leaves()
            .map(|id| hsoftmax_logprob(tree.path(id), &rep, &node_vecs, dim).exp())
            .sum();
        worst_leaf = worst_leaf.max((total - 1.0).abs());
    }

    // stick prior sums to exactly 1; sense posterior to 1e-10
    let vocab = vocab_of(8);
    let mut senses = SenseEmbeddings::new(&vocab, 5, 6, 0.3, 5).unwrap();
    let mut sched = SviSchedule::default();
    let data = datapoints_from_sentences(
        &(0..40)
            .map(|i| vec![format!("w{}", i % 8), format!("w{}", (i + 3) % 8)])
            .collect::<Vec<_>>(),
        &vocab,
        2,
    );
    let mut rng2 = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        adagram::svi_epoch(&data, &mut senses, &mut sched, &mut rng2).unwrap();
    }
    let mut stick_exact = true;
    let mut worst_posterior = 0.0f64;
    for w in 0..vocab.size() {
        let prior = senses.stick_prior(w);
        stick_exact &= prior.iter().sum::<f64>() == 1.0;
        let post = senses.sense_posterior(w, &[RESERVED.len(), RESERVED.len() + 1]);
        worst_posterior = worst_posterior.max((post.probs.iter().sum::<f64>() - 1.0).abs());
    }

    let pass = worst_softmax < 1e-12 && worst_leaf < 1e-12 && stick_exact && worst_posterior < 1e-10;
    report(
        "1 normalization",
        pass,
        &format!(
            "softmax {worst_softmax:.1e}, huffman {worst_leaf:.1e}, stick exact {stick_exact}, posterior {worst_posterior:.1e}"
        ),
    );
}

// ---------------------------------------------------------------- 2

fn randomized<M: Parameterized>(model: &mut M, seed: u64, range: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.tensors_mut() {
        for v in t.values_mut() {
            *v = rng.gen_range(-range..range);
        }
    }
}

#[test]
fn criterion_02_gradient_suite() {
    let opts = GradCheckOpts {
        max_coords_per_tensor: 120,
        ..Default::default()
    };
    let mut worst = Vec::new();

    // LSTM step
    {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut cell = LstmCell::new("l", 4, 5, &mut rng);
        randomized(&mut cell, 22, 0.8);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cache = cell.forward(&x, &h, &c).unwrap();
        cell.zero_grad();
        cell.backward(&cache, &[1.0; 5], &[0.0; 5]);
        let rep = grad_check(&mut cell, |m| m.forward(&x, &h, &c).unwrap().h.iter().sum(), &opts);
        worst.push(("lstm", rep.max_rel_err));
    }

    // softmax cross-entropy
    {
        let logits = vec![0.4, -1.2, 2.0, 0.1, -0.3];
        let (_, grad) = softmax_xent(&logits, 1).unwrap();
        let mut t = ParamTensor::from_values("logits", &[5], logits).unwrap();
        t.grad_mut().copy_from_slice(&grad);
        let mut set = TensorSet(vec![t]);
        let rep = grad_check(&mut set, |s| softmax_xent(s.0[0].values(), 1).unwrap().0, &opts);
        worst.push(("softmax_xent", rep.max_rel_err));
    }

    // hierarchical softmax w.r.t. rep and node vectors
    {
        let vocab = vocab_of(6);
        let tree = HuffmanTree::build(&vocab).unwrap();
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let node_vecs: Vec<f64> = (0..tree.n_inner() * dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let rep: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = RESERVED.len() + 2;
        let mut rep_t = ParamTensor::from_values("rep", &[dim], rep.clone()).unwrap();
        let mut nodes_t =
            ParamTensor::from_values("nodes", &[tree.n_inner(), dim], node_vecs.clone()).unwrap();
        let mut d_rep = vec![0.0; dim];
        let mut d_nodes = vec![0.0; node_vecs.len()];
        hsoftmax_backward(tree.path(target), &rep, &node_vecs, dim, 1.0, &mut d_rep, &mut d_nodes);
        rep_t.grad_mut().copy_from_slice(&d_rep);
        nodes_t.grad_mut().copy_from_slice(&d_nodes);
        let mut set = TensorSet(vec![rep_t, nodes_t]);
        let rep = grad_check(
            &mut set,
            |s| -hsoftmax_logprob(tree.path(target), s.0[0].values(), s.0[1].values(), dim),
            &opts,
        );
        // the loss closure negates the log prob, so flip the stored grads once
        let flipped = grad_check(
            &mut {
                let mut s2 = TensorSet(set.0.clone());
                for t in s2.tensors_mut() {
                    for g in t.grad_mut() {
                        *g = -*g;
                    }
                }
                s2
            },
            |s| -hsoftmax_logprob(tree.path(target), s.0[0].values(), s.0[1].values(), dim),
            &opts,
        );
        let _ = rep;
        worst.push(("hsoftmax", flipped.max_rel_err));
    }

    // negative-sampling loss
    {
        let in_vec = vec![0.3, -0.2, 0.9];
        let pos = vec![0.1, 0.4, -0.5];
        let n1 = vec![0.7, 0.0, 0.2];
        let n2 = vec![-0.6, 0.5, 0.3];
        let (_, d_in, d_pos, d_negs) = sgns_loss_grad(&in_vec, &pos, &[&n1, &n2]);
        let mut tensors = vec![
            ParamTensor::from_values("in", &[3], in_vec).unwrap(),
            ParamTensor::from_values("pos", &[3], pos).unwrap(),
            ParamTensor::from_values("n1", &[3], n1).unwrap(),
            ParamTensor::from_values("n2", &[3], n2).unwrap(),
        ];
        tensors[0].grad_mut().copy_from_slice(&d_in);
        tensors[1].grad_mut().copy_from_slice(&d_pos);
        tensors[2].grad_mut().copy_from_slice(&d_negs[0]);
        tensors[3].grad_mut().copy_from_slice(&d_negs[1]);
        let mut set = TensorSet(tensors);
        let rep = grad_check(
            &mut set,
            |s| {
                sgns_loss_grad(
                    s.0[0].values(),
                    s.0[1].values(),
                    &[s.0[2].values(), s.0[3].values()],
                )
                .0
            },
            &opts,
        );
        worst.push(("sgns", rep.max_rel_err));
    }

    // attention block: ANN, W, b, context and word embeddings, outputs
    {
        let mut model = AttentionSkipgram::new(RESERVED.len() + 6, 4, 3, 41);
        randomized(&mut model, 42, 0.6);
        let a = RESERVED.len();
        let window = vec![a + 1, a + 2];
        let negs = vec![vec![a + 3, a + 4], vec![a + 5, a + 3]];
        model.zero_grad();
        model.window_loss_backward(a, &window, &negs);
        let rep = grad_check(
            &mut model,
            |m| {
                let mut probe = m.clone();
                probe.zero_grad();
                probe.window_loss_backward(a, &window, &negs)
            },
            &opts,
        );
        worst.push(("attention", rep.max_rel_err));
    }

    // full conditional definition model, attention path included
    {
        let vocab = vocab_of(5);
        let attn = AttentionSkipgram::new(vocab.size(), 3, 3, 51);
        let mut model = DefinitionModel::new(
            ModelConfig {
                embed_dim: 4,
                cond_dim: 3,
                hidden: 5,
                layers: 2,
                dropout: 0.0,
                mode: ConditioningMode::SeedInputAttention,
                seed: 52,
                ..Default::default()
            },
            vocab.clone(),
            Conditioner::attention(attn, &vocab, &vocab, true),
        )
        .unwrap();
        randomized(&mut model, 53, 0.7);
        let head = vocab.id("w0").unwrap();
        let ctx: Vec<usize> = [1, 2, 3].iter().map(|i| vocab.id(&format!("w{i}")).unwrap()).collect();
        let def: Vec<usize> = [2, 4, 1].iter().map(|i| vocab.id(&format!("w{i}")).unwrap()).collect();
        model.zero_grad();
        let fwd = model.forward_ids(head, &ctx, &def, false, None).unwrap();
        model.backward(&fwd);
        let rep = grad_check(
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
        worst.push(("conditional model", rep.max_rel_err));
    }

    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report("2 gradients", max < 1e-4, &detail.join(", "));
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_factorization_oracle() {
    // |V| = 5 (one real token + reserved), d_h = 4; sum over the sequence
    // tree to depth 3 plus the unterminated remainder.
    let vocab = vocab_of(1);
    assert_eq!(vocab.size(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let conditioner = Conditioner::Input {
        vectors: ParamTensor::uniform("condvecs", &[vocab.size(), 3], -0.5, 0.5, &mut rng),
    };
    let mut model = DefinitionModel::new(
        ModelConfig {
            embed_dim: 3,
            cond_dim: 3,
            hidden: 4,
            layers: 2,
            dropout: 0.0,
            mode: ConditioningMode::SeedInput,
            seed: 62,
            ..Default::default()
        },
        vocab.clone(),
        conditioner,
    )
    .unwrap();
    randomized(&mut model, 63, 0.8);

    let head = vocab.id("w0").unwrap();
    let ctx = vec![head];
    let non_eos: Vec<usize> = (0..vocab.size()).filter(|&i| i != EOS).collect();

    let mut total = 0.0;
    let mut frontier: Vec<(Vec<usize>, f64)> = vec![(vec![], 0.0)];
    for _depth in 0..3 {
        let mut next = Vec::new();
        for (prefix, lp_prefix) in frontier {
            // teacher-forced mass of this prefix terminated by <eos>
            let fwd = model.forward_ids(head, &ctx, &prefix, false, None).unwrap();
            total += fwd.nlls.iter().map(|x| -x).sum::<f64>().exp();

            let mut stepper = defmod::defmodel::Stepper::new(&model, head, &ctx);
            let mut input = stepper.start_input();
            for &tok in &prefix {
                stepper.step(input).unwrap();
                input = tok;
            }
            let dist = stepper.step(input).unwrap();
            for &tok in &non_eos {
                next.push((
                    prefix.iter().copied().chain(std::iter::once(tok)).collect(),
                    lp_prefix + dist[tok],
                ));
            }
        }
        frontier = next;
    }
    for (_, lp_prefix) in &frontier {
        total += lp_prefix.exp();
    }

    let err = (total - 1.0).abs();
    report("3 factorization", err < 1e-9, &format!("tree mass 1 {err:.1e}"));
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_zero_conditioning_equivalence() {
    let vocab = vocab_of(5);
    let cond_dim = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut imodel = DefinitionModel::new(
        ModelConfig {
            embed_dim: 4,
            cond_dim,
            hidden: 5,
            layers: 2,
            dropout: 0.0,
            mode: ConditioningMode::SeedInput,
            pretraining: true,
            seed: 72,
            ..Default::default()
        },
        vocab.clone(),
        Conditioner::None,
    )
    .unwrap();
    randomized(&mut imodel, 73, 0.8);
    let _ = &mut rng;

    let mut nmodel = DefinitionModel::new(
        ModelConfig {
            embed_dim: 4,
            cond_dim: 0,
            hidden: 5,
            layers: 2,
            dropout: 0.0,
            mode: ConditioningMode::None,
            seed: 74,
            ..Default::default()
        },
        vocab.clone(),
        Conditioner::None,
    )
    .unwrap();

    // share weights, dropping the v* columns of the first layer
    let src: Vec<Vec<f64>> = imodel.tensors().iter().map(|t| t.values().to_vec()).collect();
    let shapes: Vec<Vec<usize>> = imodel.tensors().iter().map(|t| t.shape().to_vec()).collect();
    for (ti, t) in nmodel.tensors_mut().into_iter().enumerate() {
        if t.name() == "lstm0.wx" {
            let rows = shapes[ti][0];
            let cols_src = shapes[ti][1];
            let cols_dst = cols_src - cond_dim;
            let mut vals = vec![0.0; rows * cols_dst];
            for r in 0..rows {
                vals[r * cols_dst..(r + 1) * cols_dst]
                    .copy_from_slice(&src[ti][r * cols_src + cond_dim..(r + 1) * cols_src]);
            }
            t.values_mut().copy_from_slice(&vals);
        } else {
            t.values_mut().copy_from_slice(&src[ti]);
        }
    }

    let entry = DefinitionEntry {
        headword: "w0".into(),
        definition: vec!["w2".into(), "w1".into(), "w4".into()],
        context: vec!["w3".into()],
    };
    let (lp_i, nll_i) = imodel.teacher_forced_logprob(&entry).unwrap();
    let (lp_n, nll_n) = nmodel.teacher_forced_logprob(&entry).unwrap();
    let bit_equal = nll_i
        .iter()
        .zip(nll_n.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    report(
        "4 v*=0 equivalence",
        bit_equal && lp_i.to_bits() == lp_n.to_bits(),
        &format!("per-token losses bit-identical: {bit_equal}"),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_decoding() {
    let vocab = vocab_of(4);
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let mut model = DefinitionModel::new(
            ModelConfig {
                embed_dim: 3,
                cond_dim: 0,
                hidden: 4,
                layers: 1,
                dropout: 0.0,
                mode: ConditioningMode::Seed,
                seed,
                ..Default::default()
            },
            vocab.clone(),
            Conditioner::None,
        )
        .unwrap();
        randomized(&mut model, seed.wrapping_mul(7919) ^ 0xab, 0.9);
        let head = vocab.id("w0").unwrap();
        let sampled = model
            .generate(
                head,
                &[],
                &GenerationConfig {
                    temperature: 1e-6,
                    max_len: 8,
                    seed: seed ^ 0x51ed,
                },
            )
            .unwrap();
        let greedy = model.generate_greedy(head, &[], 8).unwrap();
        if sampled.ids != greedy {
            mismatches += 1;
        }
    }

    // fixed-seed bit reproducibility
    let mut model = DefinitionModel::new(
        ModelConfig {
            embed_dim: 3,
            cond_dim: 0,
            hidden: 4,
            layers: 1,
            dropout: 0.0,
            mode: ConditioningMode::Seed,
            seed: 5,
            ..Default::default()
        },
        vocab.clone(),
        Conditioner::None,
    )
    .unwrap();
    randomized(&mut model, 1234, 0.9);
    let cfg = GenerationConfig {
        temperature: 0.7,
        max_len: 10,
        seed: 99,
    };
    let head = vocab.id("w1").unwrap();
    let a = model.generate(head, &[], &cfg).unwrap();
    let b = model.generate(head, &[], &cfg).unwrap();
    let reproducible = a.ids == b.ids
        && a.logprobs
            .iter()
            .zip(b.logprobs.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());

    report(
        "5 decoding",
        mismatches == 0 && reproducible,
        &format!("greedy mismatches {mismatches}/100, reproducible {reproducible}"),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_bleu_oracle() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bleu_cases.json");
    let fixture: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let pairs = fixture["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 20);
    let mut worst = 0.0f64;
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for case in pairs {
        let hyp: Vec<String> = case["hyp"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        let rf: Vec<String> = case["ref"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        let expected = case["expected"].as_f64().unwrap();
        let got = bleu_corpus(std::slice::from_ref(&hyp), std::slice::from_ref(&rf)).unwrap();
        worst = worst.max((got - expected).abs());
        hyps.push(hyp);
        refs.push(rf);
    }
    let corpus_expected = fixture["corpus_expected"].as_f64().unwrap();
    worst = worst.max((bleu_corpus(&hyps, &refs).unwrap() - corpus_expected).abs());

    let identity: Vec<Vec<String>> =
        vec![["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect()];
    let identity_score = bleu_corpus(&identity, &identity).unwrap();
    let disjoint = bleu_corpus(
        &[["x", "y", "z", "q"].iter().map(|s| s.to_string()).collect()],
        &[["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect()],
    )
    .unwrap();

    report(
        "6 bleu oracle",
        worst < 1e-6 && identity_score == 100.0 && disjoint == 0.0,
        &format!("fixtures max dev {worst:.1e}, identity {identity_score}, disjoint {disjoint}"),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_perplexity_identity() {
    // uniform model over |V| = 100
    let vocab = vocab_of(96);
    assert_eq!(vocab.size(), 100);
    let mut model = DefinitionModel::new(
        ModelConfig {
            embed_dim: 3,
            cond_dim: 0,
            hidden: 4,
            layers: 1,
            dropout: 0.0,
            mode: ConditioningMode::Seed,
            seed: 7,
            ..Default::default()
        },
        vocab,
        Conditioner::None,
    )
    .unwrap();
    for t in model.tensors_mut() {
        if t.name().starts_with("proj") {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let data = vec![
        DefinitionEntry {
            headword: "w0".into(),
            definition: vec!["w1".into(), "w2".into()],
            context: vec!["w3".into()],
        },
        DefinitionEntry {
            headword: "w4".into(),
            definition: vec!["w5".into()],
            context: vec!["w6".into()],
        },
    ];
    let uniform_err = (perplexity(&model, &data).unwrap() - 100.0).abs();

    // hand-set logits: zero LSTM keeps the hidden state at zero, so the
    // logits equal the projection bias everywhere.
    let vocab = vocab_of(2);
    let mut model = DefinitionModel::new(
        ModelConfig {
            embed_dim: 3,
            cond_dim: 0,
            hidden: 4,
            layers: 1,
            dropout: 0.0,
            mode: ConditioningMode::Seed,
            seed: 8,
            ..Default::default()
        },
        vocab.clone(),
        Conditioner::None,
    )
    .unwrap();
    let bias = [0.3, -1.0, 0.5, 2.0, 1.0, -0.5];
    for t in model.tensors_mut() {
        if t.name() == "proj_b" {
            t.values_mut().copy_from_slice(&bias);
        } else if t.name() != "embed" {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let w0 = vocab.id("w0").unwrap();
    let w1 = vocab.id("w1").unwrap();
    let data = vec![
        DefinitionEntry {
            headword: "w0".into(),
            definition: vec!["w0".into()],
            context: vec!["w1".into()],
        },
        DefinitionEntry {
            headword: "w1".into(),
            definition: vec!["w1".into(), "w1".into()],
            context: vec!["w0".into()],
        },
    ];
    let z: f64 = bias.iter().map(|b| b.exp()).sum::<f64>().ln();
    let nlls = [
        z - bias[w0],
        z - bias[EOS],
        z - bias[w1],
        z - bias[w1],
        z - bias[EOS],
    ];
    let expected = (nlls.iter().sum::<f64>() / nlls.len() as f64).exp();
    let hand_err = (perplexity(&model, &data).unwrap() - expected).abs();

    report(
        "7 perplexity",
        uniform_err < 1e-9 && hand_err < 1e-9,
        &format!("uniform dev {uniform_err:.1e}, hand-logit dev {hand_err:.1e}"),
    );
}

// ---------------------------------------------------------------- 8

// Independent special functions for the ELBO oracle: recurrence plus
// asymptotic series, not the library's statrs-backed path.
fn digamma_oracle(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut x = x;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln() - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)))
}

fn ln_gamma_oracle(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut x = x;
    while x < 10.0 {
        acc -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Exhaustive-latent-sum ELBO written against public accessors only.
fn elbo_oracle(model: &SenseEmbeddings, data: &[SenseDatapoint]) -> f64 {
    let kmax = model.kmax;
    let dim = model.dim;
    let tree = model.tree().expect("trained model");
    let node_vecs = model.node_vecs();
    let log_sigmoid = |x: f64| -> f64 {
        if x >= 0.0 {
            -(-x).exp().ln_1p()
        } else {
            x - x.exp().ln_1p()
        }
    };

    let elog_prior = |w: usize| -> Vec<f64> {
        let mut out = vec![0.0; kmax];
        let mut tail = 0.0;
        for k in 0..kmax {
            if k + 1 < kmax {
                let (a, b) = model.beta(w, k);
                out[k] = digamma_oracle(a) - digamma_oracle(a + b) + tail;
                tail += digamma_oracle(b) - digamma_oracle(a + b);
            } else {
                out[k] = tail;
            }
        }
        out
    };

    let mut bound = 0.0;
    for dp in data {
        let prior = elog_prior(dp.center);
        // explicit per-configuration scores
        let mut scores = vec![0.0; kmax];
        for (k, score) in scores.iter_mut().enumerate() {
            let rep = model.sense_vec(dp.center, k);
            let mut ll = 0.0;
            let mut ctx: Vec<usize> = dp.context.clone();
            ctx.sort_unstable();
            for &y in &ctx {
                for &(node, sign) in tree.path(y) {
                    let row = &node_vecs[node * dim..(node + 1) * dim];
                    let dot: f64 = rep.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                    ll += log_sigmoid(sign * dot);
                }
            }
            *score = prior[k] + ll;
        }
        // optimal q, then the explicit sum over all sense configurations
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let zs: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        let qs: Vec<f64> = scores.iter().map(|s| (s - m).exp() / zs).collect();
        for (q, s) in qs.iter().zip(scores.iter()) {
            if *q > 0.0 {
                bound += q * (s - q.ln());
            }
        }
    }

    let ln_beta = |a: f64, b: f64| ln_gamma_oracle(a) + ln_gamma_oracle(b) - ln_gamma_oracle(a + b);
    for w in 0..model.vocab_size {
        for k in 0..kmax.saturating_sub(1) {
            let (a, b) = model.beta(w, k);
            let kl = ln_beta(1.0, model.alpha) - ln_beta(a, b)
                + (a - 1.0) * digamma_oracle(a)
                + (b - model.alpha) * digamma_oracle(b)
                + (1.0 + model.alpha - a - b) * digamma_oracle(a + b);
            bound -= kl;
        }
    }
    bound
}

#[test]
fn criterion_08_elbo_monotonicity() {
    // toy instance: |V| = 6 real tokens, kmax = 2, 50 pairs
    let vocab = vocab_of(6);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let lo = RESERVED.len();
    let hi = vocab.size();
    let data: Vec<SenseDatapoint> = (0..50)
        .map(|_| SenseDatapoint {
            center: rng.gen_range(lo..hi),
            context: vec![rng.gen_range(lo..hi)],
        })
        .collect();
    let mut model = SenseEmbeddings::new(&vocab, 2, 5, 0.3, 82).unwrap();
    let mut sched = SviSchedule::full_batch();

    let mut prev = elbo_oracle(&model, &data);
    let mut min_gain = f64::INFINITY;
    let mut max_disagreement = 0.0f64;
    for _ in 0..10 {
        let lib_bound = adagram::svi_epoch(&data, &mut model, &mut sched, &mut rng).unwrap();
        let oracle_bound = elbo_oracle(&model, &data);
        max_disagreement = max_disagreement
            .max((lib_bound - oracle_bound).abs() / oracle_bound.abs().max(1.0));
        min_gain = min_gain.min(oracle_bound - prev);
        prev = oracle_bound;
    }

    report(
        "8 elbo monotonicity",
        min_gain >= -1e-9 && max_disagreement < 1e-6,
        &format!("min epoch gain {min_gain:.3e}, oracle disagreement {max_disagreement:.1e}"),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_disambiguation_accuracy() {
    let mut accuracies = Vec::new();
    let mut active_counts = Vec::new();
    for seed in [1u64, 2, 3] {
        let spec = SyntheticPolysemySpec::default_two_sense(seed);
        let data = make_synthetic(&spec).unwrap();
        let vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);
        let mut model = SenseEmbeddings::new(&vocab, 4, 32, 0.1, seed ^ 0x9).unwrap();
        let points = datapoints_from_sentences(&data.corpus, &vocab, 4);
        let mut sched = SviSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x571);
        for _ in 0..12 {
            adagram::svi_epoch(&points, &mut model, &mut sched, &mut rng).unwrap();
        }
        let counts = model.prune_senses(0.05);
        let pseudo = vocab.id(&spec.pseudoword).unwrap();
        active_counts.push(counts[pseudo] as f64);

        // 200 held-out contexts = the test split; best bijective mapping of
        // predicted senses onto generator labels
        assert_eq!(data.test.len(), 200);
        let mut preds = Vec::new();
        for entry in &data.test {
            let ctx: Vec<usize> = entry.context.iter().map(|t| vocab.id_or_unk(t)).collect();
            let (k, _) = model.disambiguate(pseudo, &ctx);
            preds.push(k);
        }
        let mut best_acc = 0.0f64;
        let sense_ids: Vec<usize> = (0..model.kmax).collect();
        for &sense_a in &sense_ids {
            for &sense_b in &sense_ids {
                if sense_a == sense_b {
                    continue;
                }
                let correct = preds
                    .iter()
                    .zip(data.test_labels.iter())
                    .filter(|(p, l)| (**p == sense_a && **l == 0) || (**p == sense_b && **l == 1))
                    .count();
                best_acc = best_acc.max(correct as f64 / preds.len() as f64);
            }
        }
        accuracies.push(best_acc);
    }
    let acc = median(accuracies.clone());
    let active = median(active_counts.clone());
    report(
        "9 disambiguation",
        acc >= 0.9 && active == 2.0,
        &format!("median accuracy {acc:.3} (per-seed {accuracies:?}), median active {active} ({active_counts:?})"),
    );
}

// ---------------------------------------------------------------- 10 & 11

struct BenchmarkRun {
    att_ppl: f64,
    si_ppl: f64,
    att_bleu: f64,
    si_bleu: f64,
    template_hit_rates: Vec<f64>, // per sense
}

fn run_benchmark(seed: u64) -> BenchmarkRun {
    let spec = SyntheticPolysemySpec::default_two_sense(seed);
    let data = make_synthetic(&spec).unwrap();
    let corpus_vocab = Vocabulary::build(data.corpus.iter().flatten().map(|s| s.as_str()), 1, None);

    // pretraining: skip-gram vectors for S+I, attention block for S+I-Attention
    let sg_cfg = defmod::skipgram::SkipGramTrainConfig {
        dim: 32,
        epochs: 3,
        lr: 0.05,
        sampling: defmod::skipgram::NegSamplingConfig {
            negatives: 5,
            window: 3,
            noise_power: 0.75,
            subsample: 0.0,
        },
        seed: seed ^ 0x56,
    };
    let (table, _) = defmod::skipgram::train_skipgram(&data.corpus, &corpus_vocab, &sg_cfg).unwrap();
    let word_vectors = table.to_word_vectors(&corpus_vocab);

    let attn_cfg = AttentionPretrainConfig {
        dim: 32,
        hidden: 32,
        epochs: 3,
        adam: AdamConfig::with_lr(5e-3),
        sampling: defmod::skipgram::NegSamplingConfig {
            negatives: 5,
            window: 3,
            noise_power: 0.75,
            subsample: 0.0,
        },
        batch_pairs: 64,
        freeze_embeddings: false,
        seed: seed ^ 0xa7,
    };
    let (attn, _) = pretrain_attention(&data.corpus, &corpus_vocab, &attn_cfg).unwrap();

    let dataset_vocab = Vocabulary::from_entries(&data.train, 1, None);
    let train_cfg = TrainConfig {
        epochs: 8,
        batch_size: 16,
        adam: AdamConfig::with_lr(2e-3),
        seed: seed ^ 0xdef,
        ..Default::default()
    };
    let model_cfg = |mode: ConditioningMode, s: u64| ModelConfig {
        embed_dim: 32,
        cond_dim: 32,
        hidden: 64,
        layers: 2,
        dropout: 0.3,
        mode,
        seed: s,
        ..Default::default()
    };

    let mut att_model = DefinitionModel::new(
        model_cfg(ConditioningMode::SeedInputAttention, seed ^ 0x1),
        dataset_vocab.clone(),
        Conditioner::attention(attn, &corpus_vocab, &dataset_vocab, false),
    )
    .unwrap();
    train_definitions(&mut att_model, &data.train, &data.val, &train_cfg).unwrap();

    let mut si_model = DefinitionModel::new(
        model_cfg(ConditioningMode::SeedInput, seed ^ 0x2),
        dataset_vocab.clone(),
        Conditioner::input(&word_vectors, &dataset_vocab),
    )
    .unwrap();
    train_definitions(&mut si_model, &data.train, &data.val, &train_cfg).unwrap();

    // test perplexity and multi-meaning BLEU (3 generation trials)
    let att_ppl = perplexity(&att_model, &data.test).unwrap();
    let si_ppl = perplexity(&si_model, &data.test).unwrap();
    let subset = multi_meaning_subset(&data.test);
    let refs: Vec<Vec<String>> = subset.iter().map(|e| e.definition.clone()).collect();
    let gen_cfg = GenerationConfig {
        temperature: 0.1,
        max_len: 16,
        seed: 0,
    };
    let bleu_of = |m: &DefinitionModel| -> f64 {
        let scores: Vec<f64> = (0..3)
            .map(|t| trial_bleu(m, &subset, &refs, seed + t, &gen_cfg).unwrap())
            .collect();
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    let att_bleu = bleu_of(&att_model);
    let si_bleu = bleu_of(&si_model);

    // criterion 11: sense-correct template in >= 80% of 50 samples per sense
    let pseudo = dataset_vocab.id(&spec.pseudoword).unwrap();
    let nearest_template = |tokens: &[String]| -> usize {
        let overlap = |template: &[String]| -> usize {
            tokens.iter().filter(|t| template.contains(t)).count()
        };
        (0..spec.templates.len())
            .max_by_key(|&s| overlap(&spec.templates[s]))
            .unwrap()
    };
    let mut template_hit_rates = Vec::new();
    for sense in 0..2 {
        let contexts: Vec<&DefinitionEntry> = data
            .test
            .iter()
            .zip(data.test_labels.iter())
            .filter(|(_, l)| **l == sense)
            .map(|(e, _)| e)
            .take(50)
            .collect();
        let mut hits = 0;
        let mut total = 0;
        for (i, entry) in contexts.iter().enumerate() {
            let ctx = dataset_vocab.encode(&entry.context, false);
            let gen = att_model
                .generate(
                    pseudo,
                    &ctx,
                    &GenerationConfig {
                        temperature: 0.1,
                        max_len: 16,
                        seed: seed.wrapping_add(1000 + i as u64),
                    },
                )
                .unwrap();
            let toks = dataset_vocab.decode(&gen.ids);
            if !toks.is_empty() && nearest_template(&toks) == sense {
                hits += 1;
            }
            total += 1;
        }
        template_hit_rates.push(hits as f64 / total as f64);
    }

    BenchmarkRun {
        att_ppl,
        si_ppl,
        att_bleu,
        si_bleu,
        template_hit_rates,
    }
}

#[test]
fn criterion_10_and_11_directional_benchmark() {
    let runs: Vec<BenchmarkRun> = [11u64, 12, 13].iter().map(|&s| run_benchmark(s)).collect();

    let att_ppl = median(runs.iter().map(|r| r.att_ppl).collect());
    let si_ppl = median(runs.iter().map(|r| r.si_ppl).collect());
    let att_bleu = median(runs.iter().map(|r| r.att_bleu).collect());
    let si_bleu = median(runs.iter().map(|r| r.si_bleu).collect());
    report(
        "10 directional table",
        att_ppl < si_ppl && att_bleu > si_bleu,
        &format!(
            "ppl attention {att_ppl:.4} vs s+i {si_ppl:.4}; bleu attention {att_bleu:.2} vs s+i {si_bleu:.2}"
        ),
    );

    let sense0 = median(runs.iter().map(|r| r.template_hit_rates[0]).collect());
    let sense1 = median(runs.iter().map(|r| r.template_hit_rates[1]).collect());
    report(
        "11 qualitative templates",
        sense0 >= 0.8 && sense1 >= 0.8,
        &format!("sense-correct template rates {sense0:.2} / {sense1:.2}"),
    );
}

// ---------------------------------------------------------------- 12

#[test]
fn criterion_12_full_data_statistics() {
    let path = std::env::var("DEFMOD_OXFORD_TRAIN")
        .unwrap_or_else(|_| "data/oxford/train.jsonl".to_string());
    if !std::path::Path::new(&path).exists() {
        println!(
            "acceptance 12 full-data stats: SKIP (no dataset at {path}; set DEFMOD_OXFORD_TRAIN to run)"
        );
        return;
    }
    let entries = defmod::corpus::parse_definitions(&path).unwrap();
    let stats = defmod::corpus::stats(&entries);
    // the published average is quoted to two decimals; counts are exact
    let pass = stats.words == 33_128
        && stats.entries == 97_855
        && stats.tokens == 1_078_828
        && (stats.avg_definition_len - 11.03).abs() <= 0.01;
    report(
        "12 full-data stats",
        pass,
        &format!(
            "words {}, entries {}, tokens {}, avg {:.2}",
            stats.words, stats.entries, stats.tokens, stats.avg_definition_len
        ),
    );
}
