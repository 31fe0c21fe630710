//! Attention block: separate context-word embeddings, a one-hidden-layer
//! feed-forward network, and a linear head that turns mean-pooled context
//! features into a per-dimension soft mask over the defined word's
//! embedding. Pretrained with the negative-sampling objective, where the
//! anchor representation is its embedding gated by the window's mask.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::fnv1a64;
use crate::corpus::{subsample_sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, axpy, matvec, matvec_t_acc, outer_acc, sigmoid, AdamConfig, ParamTensor,
    Parameterized,
};
use crate::skipgram::{sgns_loss_grad, NegSamplingConfig, NoiseSampler};

/// Mask-producing block. `dim` is the width of the defined-word embedding
/// the mask gates; context embeddings and the hidden layer default to the
/// same width.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub dim: usize,
    pub ctx_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub ctx_embed: ParamTensor,
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w_mask: ParamTensor,
    pub b_mask: ParamTensor,
}

/// Activations cached by a mask forward pass.
#[derive(Debug, Clone)]
pub struct MaskCache {
    /// Unique context ids with multiplicities, ascending. Summation in this
    /// fixed order makes the mask bitwise invariant to context permutation
    /// and duplication.
    unique: Vec<(usize, f64)>,
    total: f64,
    hidden_acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    pub mask: Vec<f64>,
}

impl AttentionBlock {
    pub fn new(vocab_size: usize, dim: usize, ctx_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 0.05;
        AttentionBlock {
            dim,
            ctx_dim,
            hidden,
            vocab_size,
            ctx_embed: ParamTensor::uniform("attn.ctx_embed", &[vocab_size, ctx_dim], -r, r, &mut rng),
            w1: ParamTensor::uniform("attn.w1", &[hidden, ctx_dim], -r, r, &mut rng),
            b1: ParamTensor::zeros("attn.b1", &[hidden]),
            w_mask: ParamTensor::uniform("attn.w_mask", &[dim, hidden], -r, r, &mut rng),
            b_mask: ParamTensor::zeros("attn.b_mask", &[dim]),
        }
    }

    /// mask = sigmoid(W . mean_i ANN(c_i) + b), with ANN one tanh layer.
    /// Reserved ids are filtered out; an empty context after filtering gives
    /// the bias-only mask sigmoid(b).
    pub fn compute_mask(&self, context: &[usize]) -> MaskCache {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for &id in context {
            if !Vocabulary::is_reserved(id) && id < self.vocab_size {
                *counts.entry(id).or_insert(0.0) += 1.0;
            }
        }
        let unique: Vec<(usize, f64)> = counts.into_iter().collect();
        let total: f64 = unique.iter().map(|(_, c)| c).sum();

        let mut pooled = vec![0.0; self.hidden];
        let mut hidden_acts = Vec::with_capacity(unique.len());
        for &(id, count) in &unique {
            let mut z = self.b1.values().to_vec();
            let mut zx = vec![0.0; self.hidden];
            matvec(self.w1.values(), self.hidden, self.ctx_dim, self.ctx_embed.row(id), &mut zx);
            for k in 0..self.hidden {
                z[k] = (z[k] + zx[k]).tanh();
            }
            axpy(count, &z, &mut pooled);
            hidden_acts.push(z);
        }
        if total > 0.0 {
            pooled.iter_mut().for_each(|p| *p /= total);
        }

        let mut pre = self.b_mask.values().to_vec();
        let mut px = vec![0.0; self.dim];
        matvec(self.w_mask.values(), self.dim, self.hidden, &pooled, &mut px);
        let mask: Vec<f64> = pre
            .iter_mut()
            .zip(px.iter())
            .map(|(b, x)| sigmoid(*b + x))
            .collect();

        MaskCache {
            unique,
            total,
            hidden_acts,
            pooled,
            mask,
        }
    }

    /// Backward through the mask computation, accumulating parameter and
    /// context-embedding gradients.
    pub fn backward_mask(&mut self, cache: &MaskCache, d_mask: &[f64]) {
        let d_pre: Vec<f64> = d_mask
            .iter()
            .zip(cache.mask.iter())
            .map(|(d, m)| d * m * (1.0 - m))
            .collect();
        for (g, d) in self.b_mask.grad_mut().iter_mut().zip(d_pre.iter()) {
            *g += d;
        }
        outer_acc(self.w_mask.grad_mut(), self.dim, self.hidden, &d_pre, &cache.pooled);
        let mut d_pooled = vec![0.0; self.hidden];
        matvec_t_acc(self.w_mask.values(), self.dim, self.hidden, &d_pre, &mut d_pooled);

        for ((id, count), h) in cache.unique.iter().zip(cache.hidden_acts.iter()) {
            let w = count / cache.total;
            let d_z: Vec<f64> = d_pooled
                .iter()
                .zip(h.iter())
                .map(|(d, hv)| w * d * (1.0 - hv * hv))
                .collect();
            for (g, d) in self.b1.grad_mut().iter_mut().zip(d_z.iter()) {
                *g += d;
            }
            let emb = self.ctx_embed.row(*id).to_vec();
            outer_acc(self.w1.grad_mut(), self.hidden, self.ctx_dim, &d_z, &emb);
            let mut d_emb = vec![0.0; self.ctx_dim];
            matvec_t_acc(self.w1.values(), self.hidden, self.ctx_dim, &d_z, &mut d_emb);
            axpy(1.0, &d_emb, self.ctx_embed.grad_row_mut(*id));
        }
    }
}

impl Parameterized for AttentionBlock {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.ctx_embed, &self.w1, &self.b1, &self.w_mask, &self.b_mask]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.ctx_embed,
            &mut self.w1,
            &mut self.b1,
            &mut self.w_mask,
            &mut self.b_mask,
        ]
    }
}

/// a* = v ⊙ mask.
pub fn apply_mask(v: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
    if v.len() != mask.len() {
        return Err(Error::Shape(format!(
            "apply_mask: embedding has {} dims, mask has {}",
            v.len(),
            mask.len()
        )));
    }
    Ok(v.iter().zip(mask.iter()).map(|(a, m)| a * m).collect())
}

/// The attention skip-gram: block plus the anchor embedding table and the
/// output vectors the negative-sampling loss scores against.
#[derive(Debug, Clone)]
pub struct AttentionSkipgram {
    pub block: AttentionBlock,
    pub word_vecs: ParamTensor,
    pub out_vecs: ParamTensor,
}

impl AttentionSkipgram {
    pub fn new(vocab_size: usize, dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e);
        let bound = 0.5 / dim as f64;
        AttentionSkipgram {
            block: AttentionBlock::new(vocab_size, dim, dim, hidden, seed),
            word_vecs: ParamTensor::uniform("attn.word_vecs", &[vocab_size, dim], -bound, bound, &mut rng),
            out_vecs: ParamTensor::zeros("attn.out_vecs", &[vocab_size, dim]),
        }
    }

    /// Masked anchor representation for one window.
    pub fn anchor_rep(&self, anchor: usize, window: &[usize]) -> (MaskCache, Vec<f64>) {
        let cache = self.block.compute_mask(window);
        let rep = apply_mask(self.word_vecs.row(anchor), &cache.mask).expect("same dim");
        (cache, rep)
    }

    /// Negative-sampling loss for one window occurrence: the anchor's masked
    /// embedding scores every window word as a positive against `negatives`
    /// noise draws. Accumulates gradients for the block, the anchor
    /// embedding, and the touched output rows.
    pub fn window_loss_backward(
        &mut self,
        anchor: usize,
        window: &[usize],
        negs_per_positive: &[Vec<usize>],
    ) -> f64 {
        let (cache, rep) = self.anchor_rep(anchor, window);
        let dim = self.block.dim;
        let mut loss = 0.0;
        let mut d_rep = vec![0.0; dim];

        for (&pos, negs) in window.iter().zip(negs_per_positive.iter()) {
            let out_pos = self.out_vecs.row(pos).to_vec();
            let neg_rows: Vec<Vec<f64>> = negs.iter().map(|&n| self.out_vecs.row(n).to_vec()).collect();
            let neg_refs: Vec<&[f64]> = neg_rows.iter().map(|v| v.as_slice()).collect();
            let (l, d_a, d_pos, d_negs) = sgns_loss_grad(&rep, &out_pos, &neg_refs);
            loss += l;
            axpy(1.0, &d_a, &mut d_rep);
            axpy(1.0, &d_pos, self.out_vecs.grad_row_mut(pos));
            for (&n, d_neg) in negs.iter().zip(d_negs.iter()) {
                axpy(1.0, d_neg, self.out_vecs.grad_row_mut(n));
            }
        }

        // d_rep splits into the raw embedding and the mask.
        let emb = self.word_vecs.row(anchor).to_vec();
        let d_emb: Vec<f64> = d_rep.iter().zip(cache.mask.iter()).map(|(d, m)| d * m).collect();
        axpy(1.0, &d_emb, self.word_vecs.grad_row_mut(anchor));
        let d_mask: Vec<f64> = d_rep.iter().zip(emb.iter()).map(|(d, e)| d * e).collect();
        self.block.backward_mask(&cache, &d_mask);
        loss
    }
}

impl Parameterized for AttentionSkipgram {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = self.block.tensors();
        v.push(&self.word_vecs);
        v.push(&self.out_vecs);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.block.tensors_mut();
        v.push(&mut self.word_vecs);
        v.push(&mut self.out_vecs);
        v
    }
}

#[derive(Debug, Clone)]
pub struct AttentionPretrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub sampling: NegSamplingConfig,
    /// Pairs accumulated per optimizer step.
    pub batch_pairs: usize,
    /// Keep the anchor embedding table fixed and train only the block and
    /// output vectors.
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl Default for AttentionPretrainConfig {
    fn default() -> Self {
        AttentionPretrainConfig {
            dim: 100,
            hidden: 100,
            epochs: 5,
            adam: AdamConfig::with_lr(5e-3),
            sampling: NegSamplingConfig::default(),
            batch_pairs: 64,
            freeze_embeddings: false,
            seed: 1,
        }
    }
}

/// Pretrains the attention block on a tokenized corpus. For every center
/// occurrence, the mask context is the window around it (anchor excluded);
/// each window word is a positive example. Returns mean per-pair loss per
/// epoch alongside the trained model.
pub fn pretrain_attention(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    cfg: &AttentionPretrainConfig,
) -> Result<(AttentionSkipgram, Vec<f64>)> {
    let mut model = AttentionSkipgram::new(vocab.size(), cfg.dim, cfg.hidden, cfg.seed);
    let sampler = NoiseSampler::new(vocab, cfg.sampling.noise_power)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbead);
    let mut adam = cfg.adam.clone();
    adam.validate()?;
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let mut n_pairs = 0usize;
        let mut pairs_in_batch = 0usize;
        for sentence in sentences {
            let ids: Vec<usize> = sentence.iter().map(|t| vocab.id_or_unk(t)).collect();
            let kept = subsample_sentence(&ids, vocab, cfg.sampling.subsample, &mut rng);
            for i in 0..kept.len() {
                let lo = i.saturating_sub(cfg.sampling.window);
                let hi = (i + cfg.sampling.window).min(kept.len().saturating_sub(1));
                let window: Vec<usize> = (lo..=hi).filter(|&j| j != i).map(|j| kept[j]).collect();
                if window.is_empty() {
                    continue;
                }
                let negs: Vec<Vec<usize>> = window
                    .iter()
                    .map(|&pos| {
                        (0..cfg.sampling.negatives)
                            .filter_map(|_| sampler.sample_excluding(pos, &mut rng))
                            .collect()
                    })
                    .collect();
                total += model.window_loss_backward(kept[i], &window, &negs);
                n_pairs += window.len();
                pairs_in_batch += window.len();
                if pairs_in_batch >= cfg.batch_pairs {
                    if cfg.freeze_embeddings {
                        model.word_vecs.zero_grad();
                    }
                    adam_step(&mut model, &mut adam)?;
                    pairs_in_batch = 0;
                }
            }
        }
        if pairs_in_batch > 0 {
            if cfg.freeze_embeddings {
                model.word_vecs.zero_grad();
            }
            adam_step(&mut model, &mut adam)?;
        }
        history.push(if n_pairs == 0 { 0.0 } else { total / n_pairs as f64 });
    }
    Ok((model, history))
}

impl AttentionBlock {
    pub fn checkpoint_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.dim,
            "ctx_dim": self.ctx_dim,
            "hidden": self.hidden,
            "vocab_size": self.vocab_size,
        })
    }

    pub fn from_checkpoint_parts(ck: &Checkpoint, meta: &serde_json::Value) -> Result<Self> {
        let field = |name: &str| -> Result<usize> {
            meta[name]
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::Data(format!("attention meta is missing \"{name}\"")))
        };
        let mut block = AttentionBlock::new(field("vocab_size")?, field("dim")?, field("ctx_dim")?, field("hidden")?, 0);
        for t in block.tensors_mut() {
            let saved = ck.tensor(t.name())?;
            if saved.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name(),
                    saved.shape(),
                    t.shape()
                )));
            }
            t.values_mut().copy_from_slice(saved.values());
            let (m, v) = saved.moments();
            t.set_moments(m.to_vec(), v.to_vec())?;
        }
        Ok(block)
    }
}

impl AttentionSkipgram {
    pub fn save_model(&self, vocab: &Vocabulary, run_config: &str, path: impl AsRef<Path>) -> Result<()> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "attention",
            "attention": self.block.checkpoint_meta(),
            "run": run_config,
        }));
        for t in self.tensors() {
            ck.add_tensor(t.clone());
        }
        ck.add_blob("vocab", vocab.to_tsv_lines().into_bytes());
        ck.save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<(Self, Vocabulary)> {
        let ck = Checkpoint::load(path)?;
        if ck.config["kind"] != "attention" {
            return Err(Error::Data(format!(
                "expected an attention checkpoint, found kind {}",
                ck.config["kind"]
            )));
        }
        let vocab = Vocabulary::from_tsv_lines(ck.blob_str("vocab")?)?;
        let block = AttentionBlock::from_checkpoint_parts(&ck, &ck.config["attention"])?;
        let mut model = AttentionSkipgram {
            word_vecs: ParamTensor::zeros("attn.word_vecs", &[block.vocab_size, block.dim]),
            out_vecs: ParamTensor::zeros("attn.out_vecs", &[block.vocab_size, block.dim]),
            block,
        };
        for t in [&mut model.word_vecs, &mut model.out_vecs] {
            let saved = ck.tensor(t.name())?;
            t.values_mut().copy_from_slice(saved.values());
            let (m, v) = saved.moments();
            t.set_moments(m.to_vec(), v.to_vec())?;
        }
        Ok((model, vocab))
    }
}

/// Mask diagnostics: one CSV row per probe, `word,context_hash,m_0,...,m_d`.
pub fn write_mask_csv(
    block: &AttentionBlock,
    vocab: &Vocabulary,
    probes: &[(String, Vec<String>)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let header: Vec<String> = (0..block.dim).map(|i| format!("m{i}")).collect();
    writeln!(file, "word,context_hash,{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for (word, context) in probes {
        let ids: Vec<usize> = context.iter().map(|t| vocab.id_or_unk(t)).collect();
        let mask = block.compute_mask(&ids).mask;
        let hash = fnv1a64(context.join(" ").as_bytes());
        let cols: Vec<String> = mask.iter().map(|m| m.to_string()).collect();
        writeln!(file, "{word},{hash:016x},{}", cols.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
