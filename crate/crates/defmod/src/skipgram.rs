//! Single-sense skip-gram embeddings: negative-sampling training plus the
//! Huffman-tree hierarchical softmax reused by the multi-sense model.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{subsample_sentence, window_pairs, SkipGramPair, Vocabulary, RESERVED};
use crate::error::{Error, Result};
use crate::nn::{axpy, cosine, dot, log_sigmoid, sigmoid};
use crate::vectors::WordVectors;

/// Input and output word representations. Rows are indexed by vocabulary id;
/// the reserved rows exist but never train.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vocab_size: usize,
    pub in_vecs: Vec<f64>,
    pub out_vecs: Vec<f64>,
}

impl EmbeddingTable {
    /// Canonical skip-gram init: small uniform inputs, zero outputs.
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / dim as f64;
        let in_vecs = (0..vocab_size * dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        EmbeddingTable {
            dim,
            vocab_size,
            in_vecs,
            out_vecs: vec![0.0; vocab_size * dim],
        }
    }

    pub fn input(&self, id: usize) -> &[f64] {
        &self.in_vecs[id * self.dim..(id + 1) * self.dim]
    }

    pub fn output(&self, id: usize) -> &[f64] {
        &self.out_vecs[id * self.dim..(id + 1) * self.dim]
    }

    pub fn to_word_vectors(&self, vocab: &Vocabulary) -> WordVectors {
        let mut wv = WordVectors::new(self.dim);
        for id in RESERVED.len()..vocab.size() {
            wv.push(vocab.token(id), self.input(id)).expect("fixed dim");
        }
        wv
    }
}

/// Huffman code over vocabulary counts. Each leaf is a non-reserved token;
/// a path is the list of (inner node, branch sign) decisions from the root.
#[derive(Debug, Clone)]
pub struct HuffmanTree {
    n_inner: usize,
    paths: Vec<Vec<(usize, f64)>>,
}

impl HuffmanTree {
    /// Deterministic build: ties in the merge queue break by (count, id),
    /// with inner nodes keyed past the id range in creation order.
    pub fn build(vocab: &Vocabulary) -> Result<Self> {
        let n_leaves = vocab.n_real();
        if n_leaves < 2 {
            return Err(Error::Data(format!(
                "huffman tree needs at least 2 non-reserved tokens, got {n_leaves}"
            )));
        }

        struct Node {
            children: Option<(usize, usize)>, // arena indices, (left, right)
        }
        let mut arena: Vec<Node> = (0..n_leaves).map(|_| Node { children: None }).collect();
        let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> = (0..n_leaves)
            .map(|leaf| {
                let id = leaf + RESERVED.len();
                Reverse((vocab.count(id), id, leaf))
            })
            .collect();

        let mut next_key = vocab.size();
        while heap.len() > 1 {
            let Reverse((c1, _, left)) = heap.pop().unwrap();
            let Reverse((c2, _, right)) = heap.pop().unwrap();
            let idx = arena.len();
            arena.push(Node {
                children: Some((left, right)),
            });
            heap.push(Reverse((c1 + c2, next_key, idx)));
            next_key += 1;
        }
        let root = heap.pop().unwrap().0 .2;

        // Inner node ids in arena order; walk down from the root collecting
        // per-leaf (inner node, sign) paths. Left = +1, right = -1.
        let mut paths = vec![Vec::new(); vocab.size()];
        let mut stack = vec![(root, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            match arena[node].children {
                None => {
                    paths[node + RESERVED.len()] = path;
                }
                Some((left, right)) => {
                    let inner_id = node - n_leaves;
                    let mut lp = path.clone();
                    lp.push((inner_id, 1.0));
                    stack.push((left, lp));
                    let mut rp = path;
                    rp.push((inner_id, -1.0));
                    stack.push((right, rp));
                }
            }
        }

        Ok(HuffmanTree {
            n_inner: n_leaves - 1,
            paths,
        })
    }

    pub fn n_inner(&self) -> usize {
        self.n_inner
    }

    /// Path for a non-reserved vocabulary id.
    pub fn path(&self, id: usize) -> &[(usize, f64)] {
        debug_assert!(!self.paths[id].is_empty(), "id {id} is not a leaf");
        &self.paths[id]
    }

    pub fn depth(&self, id: usize) -> usize {
        self.paths[id].len()
    }

    /// All leaf ids (the non-reserved vocabulary range).
    pub fn leaves(&self) -> std::ops::Range<usize> {
        RESERVED.len()..self.paths.len()
    }
}

/// log p(word | rep) along the word's Huffman path:
/// sum over path nodes of log sigma(sign * <rep, node_vec>).
pub fn hsoftmax_logprob(path: &[(usize, f64)], rep: &[f64], node_vecs: &[f64], dim: usize) -> f64 {
    let mut lp = 0.0;
    for &(node, sign) in path {
        let s = dot(rep, &node_vecs[node * dim..(node + 1) * dim]);
        lp += log_sigmoid(sign * s);
    }
    lp
}

/// Accumulates `scale * d(logprob)/d(rep)` into `d_rep` and the node-vector
/// gradients into `d_nodes` (same layout as `node_vecs`).
pub fn hsoftmax_backward(
    path: &[(usize, f64)],
    rep: &[f64],
    node_vecs: &[f64],
    dim: usize,
    scale: f64,
    d_rep: &mut [f64],
    d_nodes: &mut [f64],
) {
    for &(node, sign) in path {
        let row = &node_vecs[node * dim..(node + 1) * dim];
        let s = dot(rep, row);
        // d log sigma(sign*s) / ds = sign * sigma(-sign*s)
        let coeff = scale * sign * sigmoid(-sign * s);
        axpy(coeff, row, d_rep);
        axpy(coeff, rep, &mut d_nodes[node * dim..(node + 1) * dim]);
    }
}

/// Negative-sampling settings shared by skip-gram and attention pretraining.
#[derive(Debug, Clone)]
pub struct NegSamplingConfig {
    pub negatives: usize,
    pub window: usize,
    /// Unigram distortion exponent for the noise distribution.
    pub noise_power: f64,
    /// Frequent-word subsampling threshold; 0 disables.
    pub subsample: f64,
}

impl Default for NegSamplingConfig {
    fn default() -> Self {
        NegSamplingConfig {
            negatives: 5,
            window: 5,
            noise_power: 0.75,
            subsample: 1e-5,
        }
    }
}

/// Noise distribution P_n(w) over non-reserved tokens, proportional to
/// count^power. Sampling is by binary search over the cumulative table.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    cum: Vec<f64>,
    first_id: usize,
}

impl NoiseSampler {
    pub fn new(vocab: &Vocabulary, power: f64) -> Result<Self> {
        if vocab.n_real() == 0 {
            return Err(Error::Data("noise sampler needs a non-empty vocabulary".into()));
        }
        let mut cum = Vec::with_capacity(vocab.n_real());
        let mut acc = 0.0;
        for id in RESERVED.len()..vocab.size() {
            acc += (vocab.count(id) as f64).powf(power);
            cum.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Data("noise distribution has zero total mass".into()));
        }
        Ok(NoiseSampler {
            cum,
            first_id: RESERVED.len(),
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cum.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let pos = self.cum.partition_point(|&c| c <= u);
        self.first_id + pos.min(self.cum.len() - 1)
    }

    /// Resamples on collision with `exclude`, up to 10 tries; `None` means
    /// the draw should be skipped.
    pub fn sample_excluding(&self, exclude: usize, rng: &mut impl Rng) -> Option<usize> {
        for _ in 0..10 {
            let id = self.sample(rng);
            if id != exclude {
                return Some(id);
            }
        }
        None
    }
}

/// Negative-sampling loss for one pair with negatives already drawn:
/// -log sigma(<out_pos, in>) - sum_i log sigma(-<out_neg_i, in>).
/// Returns the loss and gradients for the input vector, the positive output
/// vector, and each negative output vector.
pub fn sgns_loss_grad(
    in_vec: &[f64],
    out_pos: &[f64],
    out_negs: &[&[f64]],
) -> (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dim = in_vec.len();
    let mut loss = 0.0;
    let mut d_in = vec![0.0; dim];
    let mut d_pos = vec![0.0; dim];
    let mut d_negs = Vec::with_capacity(out_negs.len());

    let s = dot(out_pos, in_vec);
    loss -= log_sigmoid(s);
    let coeff = -(sigmoid(-s)); // d(-log sigma(s))/ds
    axpy(coeff, out_pos, &mut d_in);
    axpy(coeff, in_vec, &mut d_pos);

    for out_neg in out_negs {
        let s = dot(out_neg, in_vec);
        loss -= log_sigmoid(-s);
        let coeff = sigmoid(s); // d(-log sigma(-s))/ds
        let mut d_neg = vec![0.0; dim];
        axpy(coeff, out_neg, &mut d_in);
        axpy(coeff, in_vec, &mut d_neg);
        d_negs.push(d_neg);
    }
    (loss, d_in, d_pos, d_negs)
}

/// One sparse SGD step on a single training pair. Draws negatives from the
/// noise distribution (excluding the positive), updates the touched rows in
/// place, and returns the pair loss.
pub fn sgns_step(
    pair: SkipGramPair,
    table: &mut EmbeddingTable,
    sampler: &NoiseSampler,
    negatives: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> f64 {
    let dim = table.dim;
    let mut negs = Vec::with_capacity(negatives);
    for _ in 0..negatives {
        if let Some(id) = sampler.sample_excluding(pair.context, rng) {
            negs.push(id);
        }
    }

    let in_vec = table.input(pair.center).to_vec();
    let out_pos = table.output(pair.context).to_vec();
    let neg_rows: Vec<Vec<f64>> = negs.iter().map(|&id| table.output(id).to_vec()).collect();
    let neg_refs: Vec<&[f64]> = neg_rows.iter().map(|v| v.as_slice()).collect();

    let (loss, d_in, d_pos, d_negs) = sgns_loss_grad(&in_vec, &out_pos, &neg_refs);

    axpy(-lr, &d_in, &mut table.in_vecs[pair.center * dim..(pair.center + 1) * dim]);
    axpy(-lr, &d_pos, &mut table.out_vecs[pair.context * dim..(pair.context + 1) * dim]);
    for (id, d_neg) in negs.iter().zip(d_negs.iter()) {
        axpy(-lr, d_neg, &mut table.out_vecs[id * dim..(id + 1) * dim]);
    }
    loss
}

#[derive(Debug, Clone)]
pub struct SkipGramTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub sampling: NegSamplingConfig,
    pub seed: u64,
}

impl Default for SkipGramTrainConfig {
    fn default() -> Self {
        SkipGramTrainConfig {
            dim: 100,
            epochs: 5,
            lr: 0.025,
            sampling: NegSamplingConfig::default(),
            seed: 1,
        }
    }
}

/// Trains skip-gram with negative sampling over tokenized sentences.
/// Deterministic for a fixed seed (single-threaded). Returns the table and
/// the mean per-pair loss of each epoch.
pub fn train_skipgram(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    cfg: &SkipGramTrainConfig,
) -> Result<(EmbeddingTable, Vec<f64>)> {
    let mut table = EmbeddingTable::new(vocab.size(), cfg.dim, cfg.seed ^ 0x5eed);
    let sampler = NoiseSampler::new(vocab, cfg.sampling.noise_power)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let mut n_pairs = 0usize;
        for sentence in sentences {
            let ids: Vec<usize> = sentence.iter().map(|t| vocab.id_or_unk(t)).collect();
            let kept = subsample_sentence(&ids, vocab, cfg.sampling.subsample, &mut rng);
            for pair in window_pairs(&kept, cfg.sampling.window) {
                total += sgns_step(
                    pair,
                    &mut table,
                    &sampler,
                    cfg.sampling.negatives,
                    cfg.lr,
                    &mut rng,
                );
                n_pairs += 1;
            }
        }
        history.push(if n_pairs == 0 { 0.0 } else { total / n_pairs as f64 });
    }
    Ok((table, history))
}

/// Top-n rows by cosine similarity to `word`, excluding the query itself and
/// reserved ids. Ties break toward the lower id.
pub fn nearest_neighbors(
    word: usize,
    table: &EmbeddingTable,
    n: usize,
) -> Result<Vec<(usize, f64)>> {
    let query = table.input(word);
    if query.iter().all(|x| *x == 0.0) {
        return Err(Error::Data(format!("row {word} is untrained (all zeros)")));
    }
    let mut scored: Vec<(usize, f64)> = (RESERVED.len()..table.vocab_size)
        .filter(|&id| id != word)
        .map(|id| (id, cosine(query, table.input(id))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}
