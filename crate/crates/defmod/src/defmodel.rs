//! Conditional definition language models. A stacked LSTM reads the
//! definition tokens; "Seed" feeds the headword as the first input, and the
//! "Input" variants concatenate a conditioning vector v* to every step
//! input: the headword's plain embedding (S+I), its disambiguated sense
//! vector (S+I-Adaptive), or its embedding gated by the context attention
//! mask (S+I-Attention). During unconditional pretraining v* is pinned to
//! zero.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adagram::SenseEmbeddings;
use crate::checkpoint::Checkpoint;
use crate::attention::{apply_mask, AttentionBlock, AttentionSkipgram, MaskCache};
use crate::corpus::{DefinitionEntry, Vocabulary, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, clip_global_norm, log_softmax, matvec, matvec_t_acc, outer_acc, softmax_inplace,
    AdamConfig, LstmCache, LstmCell, ParamTensor, Parameterized,
};
use crate::vectors::WordVectors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConditioningMode {
    /// Plain language model; sequences start at `<bos>`.
    None,
    /// Seed: the headword is the step-0 input.
    Seed,
    /// Seed plus the headword embedding concatenated to every input.
    SeedInput,
    /// Seed plus the context-disambiguated sense vector.
    SeedInputAdaptive,
    /// Seed plus the embedding gated by the attention mask.
    SeedInputAttention,
}

impl ConditioningMode {
    pub fn uses_input_vector(&self) -> bool {
        matches!(
            self,
            ConditioningMode::SeedInput
                | ConditioningMode::SeedInputAdaptive
                | ConditioningMode::SeedInputAttention
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ConditioningMode::None),
            "s" | "seed" => Ok(ConditioningMode::Seed),
            "s+i" => Ok(ConditioningMode::SeedInput),
            "s+i-adaptive" => Ok(ConditioningMode::SeedInputAdaptive),
            "s+i-attention" => Ok(ConditioningMode::SeedInputAttention),
            other => Err(Error::Config(format!(
                "unknown conditioning mode \"{other}\" (use none, s, s+i, s+i-adaptive, s+i-attention)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConditioningMode::None => "none",
            ConditioningMode::Seed => "s",
            ConditioningMode::SeedInput => "s+i",
            ConditioningMode::SeedInputAdaptive => "s+i-adaptive",
            ConditioningMode::SeedInputAttention => "s+i-attention",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Width of v*; 0 for modes without an input vector.
    pub cond_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub mode: ConditioningMode,
    /// Unconditional pretraining: v* forced to zero, sequences start at
    /// `<bos>`, and no conditioning sub-model is required.
    pub pretraining: bool,
    /// Drop the headword from the context before conditioning.
    pub exclude_headword: bool,
    /// `<unk>` definition tokens still contribute to the loss.
    pub count_unk_in_loss: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 100,
            cond_dim: 100,
            hidden: 256,
            layers: 2,
            dropout: 0.3,
            mode: ConditioningMode::SeedInput,
            pretraining: false,
            exclude_headword: false,
            count_unk_in_loss: true,
            seed: 1,
        }
    }
}

/// The sub-model that produces v*.
///
/// Conditioners trained on a pretraining corpus carry their own vocabulary;
/// `id_map` translates definition-model ids into the conditioner's id space
/// (token by token, unknown tokens to `<unk>`).
#[derive(Debug, Clone)]
pub enum Conditioner {
    None,
    /// Plain word vectors aligned by definition-model vocabulary id.
    Input { vectors: ParamTensor },
    /// Frozen multi-sense model; v* is the argmax-posterior sense vector.
    Adaptive {
        senses: SenseEmbeddings,
        vocab: Vocabulary,
        id_map: Vec<usize>,
    },
    /// Attention block plus its anchor embedding table.
    Attention {
        block: AttentionBlock,
        vectors: ParamTensor,
        id_map: Vec<usize>,
        finetune: bool,
    },
}

fn build_id_map(model_vocab: &Vocabulary, cond_vocab: &Vocabulary) -> Vec<usize> {
    (0..model_vocab.size())
        .map(|id| cond_vocab.id_or_unk(model_vocab.token(id)))
        .collect()
}

impl Conditioner {
    pub fn input(wv: &WordVectors, model_vocab: &Vocabulary) -> Self {
        Conditioner::Input {
            vectors: align_vectors(wv, model_vocab, "condvecs"),
        }
    }

    pub fn adaptive(senses: SenseEmbeddings, cond_vocab: Vocabulary, model_vocab: &Vocabulary) -> Self {
        let id_map = build_id_map(model_vocab, &cond_vocab);
        Conditioner::Adaptive {
            senses,
            vocab: cond_vocab,
            id_map,
        }
    }

    pub fn attention(
        model: AttentionSkipgram,
        cond_vocab: &Vocabulary,
        model_vocab: &Vocabulary,
        finetune: bool,
    ) -> Self {
        Conditioner::Attention {
            block: model.block,
            vectors: model.word_vecs,
            id_map: build_id_map(model_vocab, cond_vocab),
            finetune,
        }
    }
}

/// Copies rows of a token-keyed vector table into a dense id-indexed tensor.
/// Tokens absent from the table keep zero rows.
pub fn align_vectors(wv: &WordVectors, vocab: &Vocabulary, name: &str) -> ParamTensor {
    let mut t = ParamTensor::zeros(name, &[vocab.size(), wv.dim]);
    for id in 0..vocab.size() {
        if let Some(v) = wv.get(vocab.token(id)) {
            t.row_mut(id).copy_from_slice(v);
        }
    }
    t
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.1,
            max_len: 32,
            seed: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.max_len < 1 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub ids: Vec<usize>,
    /// Log probability of each emitted token, including `<eos>` when the
    /// sequence terminated on its own.
    pub logprobs: Vec<f64>,
    pub terminated: bool,
}

#[derive(Debug, Clone)]
pub struct DefinitionModel {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    embed: ParamTensor,
    layers: Vec<LstmCell>,
    proj_w: ParamTensor,
    proj_b: ParamTensor,
    conditioner: Conditioner,
}

/// Per-entry forward record kept around for backpropagation through time.
pub struct EntryForward {
    def: Vec<usize>,
    start: usize,
    cond_head: usize,
    mask_cache: Option<MaskCache>,
    inputs: Vec<Vec<f64>>,
    caches: Vec<Vec<LstmCache>>,
    drop_masks: Vec<Vec<Vec<f64>>>,
    tops: Vec<Vec<f64>>,
    dlogits: Vec<Vec<f64>>,
    pub nlls: Vec<f64>,
}

impl DefinitionModel {
    pub fn new(cfg: ModelConfig, vocab: Vocabulary, conditioner: Conditioner) -> Result<Self> {
        let mut cfg = cfg;
        cfg.vocab_size = vocab.size();
        if cfg.layers < 1 || cfg.layers > 3 {
            return Err(Error::Config(format!("layers must be 1..=3, got {}", cfg.layers)));
        }
        if !cfg.mode.uses_input_vector() {
            cfg.cond_dim = 0;
        }
        // The conditioning sub-model is checked here, not at call time.
        if cfg.mode.uses_input_vector() && !cfg.pretraining {
            match (&cfg.mode, &conditioner) {
                (ConditioningMode::SeedInput, Conditioner::Input { vectors }) => {
                    if vectors.shape()[1] != cfg.cond_dim {
                        return Err(Error::Shape(format!(
                            "conditioning vectors are {}-dim, model expects {}",
                            vectors.shape()[1],
                            cfg.cond_dim
                        )));
                    }
                }
                (ConditioningMode::SeedInputAdaptive, Conditioner::Adaptive { senses, id_map, .. }) => {
                    if senses.dim != cfg.cond_dim {
                        return Err(Error::Shape(format!(
                            "sense vectors are {}-dim, model expects {}",
                            senses.dim, cfg.cond_dim
                        )));
                    }
                    if id_map.len() != vocab.size() {
                        return Err(Error::Shape(
                            "conditioner id map does not cover the vocabulary".into(),
                        ));
                    }
                }
                (ConditioningMode::SeedInputAttention, Conditioner::Attention { block, vectors, id_map, .. }) => {
                    if block.dim != cfg.cond_dim || vectors.shape()[1] != cfg.cond_dim {
                        return Err(Error::Shape(format!(
                            "attention block is {}-dim, model expects {}",
                            block.dim, cfg.cond_dim
                        )));
                    }
                    if id_map.len() != vocab.size() {
                        return Err(Error::Shape(
                            "conditioner id map does not cover the vocabulary".into(),
                        ));
                    }
                }
                (mode, _) => {
                    return Err(Error::Config(format!(
                        "mode {} requires its conditioning sub-model at construction",
                        mode.name()
                    )));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let embed = ParamTensor::uniform(
            "embed",
            &[cfg.vocab_size, cfg.embed_dim],
            -0.05,
            0.05,
            &mut rng,
        );
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 {
                cfg.embed_dim + cfg.cond_dim
            } else {
                cfg.hidden
            };
            layers.push(LstmCell::new(&format!("lstm{l}"), d_in, cfg.hidden, &mut rng));
        }
        let proj_w = ParamTensor::uniform(
            "proj_w",
            &[cfg.vocab_size, cfg.hidden],
            -0.05,
            0.05,
            &mut rng,
        );
        let proj_b = ParamTensor::zeros("proj_b", &[cfg.vocab_size]);

        Ok(DefinitionModel {
            cfg,
            vocab,
            embed,
            layers,
            proj_w,
            proj_b,
            conditioner,
        })
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.conditioner
    }

    /// Swaps in a conditioning sub-model (used when a pretrained
    /// unconditional checkpoint is specialized for definition training).
    pub fn attach_conditioner(&mut self, conditioner: Conditioner) -> Result<()> {
        self.cfg.pretraining = false;
        let cfg = self.cfg.clone();
        let probe = DefinitionModel::new(cfg, self.vocab.clone(), conditioner)?;
        self.conditioner = probe.conditioner;
        Ok(())
    }

    /// Overwrites embedding rows from a pretrained plain-text vectors table.
    pub fn init_embeddings(&mut self, wv: &WordVectors) -> Result<()> {
        if wv.dim != self.cfg.embed_dim {
            return Err(Error::Shape(format!(
                "pretrained vectors are {}-dim, embedding layer is {}-dim",
                wv.dim, self.cfg.embed_dim
            )));
        }
        for id in 0..self.vocab.size() {
            if let Some(v) = wv.get(self.vocab.token(id)) {
                self.embed.row_mut(id).copy_from_slice(v);
            }
        }
        Ok(())
    }

    fn filtered_context(&self, head: usize, ctx: &[usize]) -> Vec<usize> {
        if self.cfg.exclude_headword {
            ctx.iter().copied().filter(|&c| c != head).collect()
        } else {
            ctx.to_vec()
        }
    }

    /// The conditioning vector v* for one (headword, context) pair. Returns
    /// an all-zero vector during pretraining and for modes without an input
    /// vector; the attention variant also hands back its mask cache so
    /// fine-tuning can push gradients through it.
    fn condition(&self, head: usize, ctx: &[usize]) -> (Vec<f64>, Option<MaskCache>) {
        if self.cfg.pretraining || !self.cfg.mode.uses_input_vector() {
            return (vec![0.0; self.cfg.cond_dim], None);
        }
        let ctx = self.filtered_context(head, ctx);
        let remap = |map: &[usize], ids: &[usize]| -> Vec<usize> {
            ids.iter().map(|&i| map.get(i).copied().unwrap_or(UNK)).collect()
        };
        match &self.conditioner {
            Conditioner::None => (vec![0.0; self.cfg.cond_dim], None),
            Conditioner::Input { vectors } => (vectors.row(head).to_vec(), None),
            Conditioner::Adaptive { senses, id_map, .. } => {
                let head_c = id_map.get(head).copied().unwrap_or(UNK);
                let ctx_c = remap(id_map, &ctx);
                (senses.disambiguate(head_c, &ctx_c).1.to_vec(), None)
            }
            Conditioner::Attention {
                block,
                vectors,
                id_map,
                ..
            } => {
                let head_c = id_map.get(head).copied().unwrap_or(UNK);
                let ctx_c = remap(id_map, &ctx);
                let cache = block.compute_mask(&ctx_c);
                let v = apply_mask(vectors.row(head_c), &cache.mask).expect("dims checked");
                (v, Some(cache))
            }
        }
    }

    /// Public view of the conditioning vector.
    pub fn condition_vector(&self, head: usize, ctx: &[usize]) -> Vec<f64> {
        self.condition(head, ctx).0
    }

    fn start_input(&self, head: usize) -> usize {
        if self.cfg.pretraining || self.cfg.mode == ConditioningMode::None {
            BOS
        } else {
            head
        }
    }

    fn step_input(&self, cond: &[f64], token: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.cfg.cond_dim + self.cfg.embed_dim);
        x.extend_from_slice(cond);
        x.extend_from_slice(self.embed.row(token));
        x
    }

    /// Teacher-forced forward over one encoded entry. Targets are the
    /// definition tokens plus `<eos>`; the seed step's own prediction is
    /// never scored. `train` enables inter-layer dropout (rng required).
    pub fn forward_ids(
        &self,
        head: usize,
        ctx: &[usize],
        def: &[usize],
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EntryForward> {
        let (cond, mask_cache) = self.condition(head, ctx);
        let start = self.start_input(head);
        let mut inputs_ids = Vec::with_capacity(def.len() + 1);
        inputs_ids.push(start);
        inputs_ids.extend_from_slice(def);
        let mut targets = def.to_vec();
        targets.push(EOS);

        let steps = inputs_ids.len();
        let nl = self.cfg.layers;
        let mut states: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| l.zero_state()).collect();
        let mut inputs = Vec::with_capacity(steps);
        let mut caches: Vec<Vec<LstmCache>> = Vec::with_capacity(steps);
        let mut drop_masks: Vec<Vec<Vec<f64>>> = Vec::with_capacity(steps);
        let mut tops = Vec::with_capacity(steps);
        let mut dlogits = Vec::with_capacity(steps);
        let mut nlls = Vec::with_capacity(steps);

        let use_dropout = train && self.cfg.dropout > 0.0 && nl > 1;
        for t in 0..steps {
            let x0 = self.step_input(&cond, inputs_ids[t]);
            let mut step_caches = Vec::with_capacity(nl);
            let mut step_drops = Vec::new();
            let mut layer_in = x0.clone();
            for l in 0..nl {
                if l > 0 && use_dropout {
                    let rng = rng.as_deref_mut().ok_or_else(|| {
                        Error::Config("dropout training requires an rng".into())
                    })?;
                    let keep = 1.0 - self.cfg.dropout;
                    let mask: Vec<f64> = (0..layer_in.len())
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (x, m) in layer_in.iter_mut().zip(mask.iter()) {
                        *x *= m;
                    }
                    step_drops.push(mask);
                }
                let cache = self.layers[l].forward(&layer_in, &states[l].0, &states[l].1)?;
                states[l] = (cache.h.clone(), cache.c.clone());
                layer_in = cache.h.clone();
                step_caches.push(cache);
            }
            let top = layer_in;
            let mut logits = self.proj_b.values().to_vec();
            let mut px = vec![0.0; self.cfg.vocab_size];
            matvec(self.proj_w.values(), self.cfg.vocab_size, self.cfg.hidden, &top, &mut px);
            for (l, p) in logits.iter_mut().zip(px.iter()) {
                *l += p;
            }
            let lp = log_softmax(&logits);
            let target = targets[t];
            nlls.push(-lp[target]);
            let mut dl: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            dl[target] -= 1.0;
            dlogits.push(dl);

            inputs.push(x0);
            caches.push(step_caches);
            drop_masks.push(step_drops);
            tops.push(top);
        }

        Ok(EntryForward {
            def: def.to_vec(),
            start,
            cond_head: head,
            mask_cache,
            inputs,
            caches,
            drop_masks,
            tops,
            dlogits,
            nlls,
        })
    }

    /// Backpropagation through time for one forward record. Gradients
    /// accumulate into the model tensors (and into the attention block when
    /// fine-tuning is enabled).
    pub fn backward(&mut self, fwd: &EntryForward) {
        let nl = self.cfg.layers;
        let dh_dim = self.cfg.hidden;
        let steps = fwd.inputs.len();
        let mut dh_next = vec![vec![0.0; dh_dim]; nl];
        let mut dc_next = vec![vec![0.0; dh_dim]; nl];
        let mut d_cond = vec![0.0; self.cfg.cond_dim];

        for t in (0..steps).rev() {
            // projection backward
            let dl = &fwd.dlogits[t];
            outer_acc(
                self.proj_w.grad_mut(),
                self.cfg.vocab_size,
                dh_dim,
                dl,
                &fwd.tops[t],
            );
            for (g, d) in self.proj_b.grad_mut().iter_mut().zip(dl.iter()) {
                *g += d;
            }
            let mut upstream = vec![0.0; dh_dim];
            matvec_t_acc(self.proj_w.values(), self.cfg.vocab_size, dh_dim, dl, &mut upstream);

            for l in (0..nl).rev() {
                let mut dh = dh_next[l].clone();
                for (a, b) in dh.iter_mut().zip(upstream.iter()) {
                    *a += b;
                }
                let (mut dx, dh_prev, dc_prev) =
                    self.layers[l].backward(&fwd.caches[t][l], &dh, &dc_next[l]);
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                if l > 0 {
                    if let Some(mask) = fwd.drop_masks[t].get(l - 1) {
                        for (d, m) in dx.iter_mut().zip(mask.iter()) {
                            *d *= m;
                        }
                    }
                    upstream = dx;
                } else {
                    // split [v*; emb(x_t)]
                    for (a, b) in d_cond.iter_mut().zip(dx.iter()) {
                        *a += b;
                    }
                    let token = if t == 0 { fwd.start } else { fwd.def[t - 1] };
                    let emb_grad = self.embed.grad_row_mut(token);
                    for (g, d) in emb_grad.iter_mut().zip(dx[self.cfg.cond_dim..].iter()) {
                        *g += d;
                    }
                }
            }
        }

        // conditioning backward, attention fine-tuning only
        if let Conditioner::Attention {
            block,
            vectors,
            id_map,
            finetune: true,
        } = &mut self.conditioner
        {
            if let Some(cache) = &fwd.mask_cache {
                let head = id_map.get(fwd.cond_head).copied().unwrap_or(UNK);
                let emb = vectors.row(head).to_vec();
                let d_emb: Vec<f64> = d_cond
                    .iter()
                    .zip(cache.mask.iter())
                    .map(|(d, m)| d * m)
                    .collect();
                for (g, d) in vectors.grad_row_mut(head).iter_mut().zip(d_emb.iter()) {
                    *g += d;
                }
                let d_mask: Vec<f64> = d_cond.iter().zip(emb.iter()).map(|(d, e)| d * e).collect();
                block.backward_mask(cache, &d_mask);
            }
        }
    }

    fn encode_entry(&self, entry: &DefinitionEntry) -> (usize, Vec<usize>, Vec<usize>) {
        let head = self.vocab.id_or_unk(&entry.headword);
        let ctx = self.vocab.encode(&entry.context, false);
        let def = self.vocab.encode(&entry.definition, false);
        (head, ctx, def)
    }

    /// Total log probability of the entry's definition (including `<eos>`)
    /// plus the per-token negative log likelihoods.
    pub fn teacher_forced_logprob(&self, entry: &DefinitionEntry) -> Result<(f64, Vec<f64>)> {
        if entry.definition.is_empty() {
            return Err(Error::Data(format!(
                "entry \"{}\" has an empty definition",
                entry.headword
            )));
        }
        let (head, ctx, def) = self.encode_entry(entry);
        let fwd = self.forward_ids(head, &ctx, &def, false, None)?;
        let total: f64 = fwd.nlls.iter().map(|nll| -nll).sum();
        Ok((total, fwd.nlls))
    }

    /// Samples a definition with temperature-scaled softmax sampling,
    /// stopping at `<eos>` or `max_len` tokens. Fixed seed, fixed output.
    pub fn generate(&self, head: usize, ctx: &[usize], cfg: &GenerationConfig) -> Result<Generation> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut stepper = Stepper::new(self, head, ctx);
        let mut input = stepper.start_input();
        let mut ids = Vec::new();
        let mut logprobs = Vec::new();
        for _ in 0..cfg.max_len {
            let lp = stepper.step(input)?;
            let mut scaled: Vec<f64> = lp.iter().map(|l| l / cfg.temperature).collect();
            softmax_inplace(&mut scaled);
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = scaled.len() - 1;
            for (i, p) in scaled.iter().enumerate() {
                acc += p;
                if draw < acc {
                    tok = i;
                    break;
                }
            }
            logprobs.push(lp[tok]);
            if tok == EOS {
                return Ok(Generation {
                    ids,
                    logprobs,
                    terminated: true,
                });
            }
            ids.push(tok);
            input = tok;
        }
        Ok(Generation {
            ids,
            logprobs,
            terminated: false,
        })
    }

    /// Greedy argmax decoding; the limit of `generate` as temperature -> 0.
    pub fn generate_greedy(&self, head: usize, ctx: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let mut stepper = Stepper::new(self, head, ctx);
        let mut input = stepper.start_input();
        let mut ids = Vec::new();
        for _ in 0..max_len {
            let lp = stepper.step(input)?;
            let tok = lp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if tok == EOS {
                break;
            }
            ids.push(tok);
            input = tok;
        }
        Ok(ids)
    }
}

impl DefinitionModel {
    /// Self-contained checkpoint: architecture, vocabulary, every weight
    /// tensor with its optimizer moments, the conditioning sub-model, and
    /// the resolved run configuration.
    pub fn save_model(
        &self,
        run_config: &str,
        adam: Option<&AdamConfig>,
        path: impl AsRef<std::path::Path>,
    ) -> Result<()> {
        let conditioner_kind = match &self.conditioner {
            Conditioner::None => "none",
            Conditioner::Input { .. } => "input",
            Conditioner::Adaptive { .. } => "adaptive",
            Conditioner::Attention { .. } => "attention",
        };
        let mut config = serde_json::json!({
            "kind": "defmodel",
            "model": serde_json::to_value(&self.cfg).expect("cfg serializes"),
            "conditioner": conditioner_kind,
            "run": run_config,
        });
        if let Some(adam) = adam {
            config["adam"] = serde_json::to_value(adam).expect("adam serializes");
        }

        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.add_tensor(self.embed.clone());
        for l in &self.layers {
            for t in l.tensors() {
                ck.add_tensor(t.clone());
            }
        }
        ck.add_tensor(self.proj_w.clone());
        ck.add_tensor(self.proj_b.clone());

        let id_map_tensor = |map: &[usize]| {
            ParamTensor::from_values(
                "cond_map",
                &[map.len()],
                map.iter().map(|&i| i as f64).collect(),
            )
            .expect("consistent shape")
        };
        match &self.conditioner {
            Conditioner::None => {}
            Conditioner::Input { vectors } => ck.add_tensor(vectors.clone()),
            Conditioner::Adaptive {
                senses,
                vocab,
                id_map,
            } => {
                config["adagram"] = senses.checkpoint_meta();
                for t in senses.checkpoint_tensors("ada.") {
                    ck.add_tensor(t);
                }
                ck.add_tensor(id_map_tensor(id_map));
                ck.add_blob("cond_vocab", vocab.to_tsv_lines().into_bytes());
            }
            Conditioner::Attention {
                block,
                vectors,
                id_map,
                finetune,
            } => {
                config["attention"] = block.checkpoint_meta();
                config["finetune_attention"] = serde_json::json!(finetune);
                for t in block.tensors() {
                    ck.add_tensor(t.clone());
                }
                ck.add_tensor(vectors.clone());
                ck.add_tensor(id_map_tensor(id_map));
            }
        }
        ck.config = config;
        ck.add_blob("vocab", self.vocab.to_tsv_lines().into_bytes());
        ck.save(path)
    }

    /// Loads a checkpoint saved by [`save_model`](Self::save_model). Returns
    /// the model, the optimizer state if one was saved, and the embedded run
    /// configuration.
    pub fn load_model(
        path: impl AsRef<std::path::Path>,
    ) -> Result<(Self, Option<AdamConfig>, String)> {
        let ck = Checkpoint::load(path)?;
        if ck.config["kind"] != "defmodel" {
            return Err(Error::Data(format!(
                "expected a definition-model checkpoint, found kind {}",
                ck.config["kind"]
            )));
        }
        let cfg: ModelConfig = serde_json::from_value(ck.config["model"].clone())
            .map_err(|e| Error::Data(format!("invalid model config: {e}")))?;
        let vocab = Vocabulary::from_tsv_lines(ck.blob_str("vocab")?)?;

        let conditioner = match ck.config["conditioner"].as_str() {
            Some("none") | None => Conditioner::None,
            Some("input") => {
                let saved = ck.tensor("condvecs")?;
                Conditioner::Input {
                    vectors: saved.clone(),
                }
            }
            Some("adaptive") => {
                let cond_vocab = Vocabulary::from_tsv_lines(ck.blob_str("cond_vocab")?)?;
                let senses = SenseEmbeddings::from_checkpoint_parts(
                    &ck,
                    "ada.",
                    &ck.config["adagram"],
                    &cond_vocab,
                )?;
                let id_map: Vec<usize> =
                    ck.tensor("cond_map")?.values().iter().map(|&x| x as usize).collect();
                Conditioner::Adaptive {
                    senses,
                    vocab: cond_vocab,
                    id_map,
                }
            }
            Some("attention") => {
                let block = AttentionBlock::from_checkpoint_parts(&ck, &ck.config["attention"])?;
                let vectors = ck.tensor("attn.word_vecs")?.clone();
                let id_map: Vec<usize> =
                    ck.tensor("cond_map")?.values().iter().map(|&x| x as usize).collect();
                Conditioner::Attention {
                    block,
                    vectors,
                    id_map,
                    finetune: ck.config["finetune_attention"].as_bool().unwrap_or(false),
                }
            }
            Some(other) => {
                return Err(Error::Data(format!("unknown conditioner kind \"{other}\"")));
            }
        };

        let mut model = DefinitionModel::new(cfg, vocab, conditioner)?;
        // Conditioner tensors were rebuilt above; everything else is
        // overwritten from the container, moments included.
        let mut own: Vec<&mut ParamTensor> = vec![&mut model.embed];
        for l in &mut model.layers {
            own.extend(l.tensors_mut());
        }
        own.push(&mut model.proj_w);
        own.push(&mut model.proj_b);
        for t in own {
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

        let adam = if ck.config["adam"].is_object() {
            Some(
                serde_json::from_value(ck.config["adam"].clone())
                    .map_err(|e| Error::Data(format!("invalid adam state: {e}")))?,
            )
        } else {
            None
        };
        let run = ck.config["run"].as_str().unwrap_or_default().to_string();
        Ok((model, adam, run))
    }
}

impl Parameterized for DefinitionModel {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = vec![&self.embed];
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.push(&self.proj_w);
        v.push(&self.proj_b);
        if let Conditioner::Attention {
            block,
            vectors,
            finetune: true,
            ..
        } = &self.conditioner
        {
            v.extend(block.tensors());
            v.push(vectors);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = vec![&mut self.embed];
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.push(&mut self.proj_w);
        v.push(&mut self.proj_b);
        if let Conditioner::Attention {
            block,
            vectors,
            finetune: true,
            ..
        } = &mut self.conditioner
        {
            v.extend(block.tensors_mut());
            v.push(vectors);
        }
        v
    }
}

/// Single-step driver over a frozen model: thread the LSTM state by hand and
/// read a log-probability vector per step. Generation, perplexity and the
/// factorization checks all run through this.
pub struct Stepper<'a> {
    model: &'a DefinitionModel,
    cond: Vec<f64>,
    head: usize,
    states: Vec<(Vec<f64>, Vec<f64>)>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a DefinitionModel, head: usize, ctx: &[usize]) -> Self {
        let (cond, _) = model.condition(head, ctx);
        Stepper {
            model,
            cond,
            head,
            states: model.layers.iter().map(|l| l.zero_state()).collect(),
        }
    }

    pub fn start_input(&self) -> usize {
        self.model.start_input(self.head)
    }

    /// Feeds one token and returns the log-probability vector over the next.
    pub fn step(&mut self, token: usize) -> Result<Vec<f64>> {
        let model = self.model;
        let mut layer_in = model.step_input(&self.cond, token);
        for (l, cell) in model.layers.iter().enumerate() {
            let cache = cell.forward(&layer_in, &self.states[l].0, &self.states[l].1)?;
            self.states[l] = (cache.h.clone(), cache.c.clone());
            layer_in = cache.h;
        }
        let mut logits = model.proj_b.values().to_vec();
        let mut px = vec![0.0; model.cfg.vocab_size];
        matvec(model.proj_w.values(), model.cfg.vocab_size, model.cfg.hidden, &layer_in, &mut px);
        for (l, p) in logits.iter_mut().zip(px.iter()) {
            *l += p;
        }
        Ok(log_softmax(&logits))
    }
}

/// Learning-rate annealing: when validation loss fails to improve for an
/// epoch, divide the rate by `factor`.
#[derive(Debug, Clone)]
pub struct AnnealingState {
    pub lr: f64,
    factor: f64,
    best: f64,
}

impl AnnealingState {
    pub fn new(lr: f64, factor: f64) -> Self {
        AnnealingState {
            lr,
            factor,
            best: f64::INFINITY,
        }
    }

    /// Returns true when the rate was just annealed.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            false
        } else {
            self.lr /= self.factor;
            true
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub anneal_factor: f64,
    pub anneal: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::with_lr(1e-3),
            clip_norm: 5.0,
            anneal_factor: 10.0,
            anneal: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_ppl: f64,
    pub val_ppl: f64,
    pub lr: f64,
}

struct Encoded {
    head: usize,
    ctx: Vec<usize>,
    def: Vec<usize>,
}

fn scale_grads(model: &mut DefinitionModel, s: f64) {
    for t in model.tensors_mut() {
        for g in t.grad_mut() {
            *g *= s;
        }
    }
}

fn dataset_nll(model: &DefinitionModel, data: &[Encoded]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0usize;
    for e in data {
        let fwd = model.forward_ids(e.head, &e.ctx, &e.def, false, None)?;
        total += fwd.nlls.iter().sum::<f64>();
        count += fwd.nlls.len();
    }
    Ok((total, count))
}

fn encode_all(model: &DefinitionModel, entries: &[DefinitionEntry]) -> Vec<Encoded> {
    entries
        .iter()
        .map(|e| {
            let (head, ctx, def) = model.encode_entry(e);
            Encoded { head, ctx, def }
        })
        .collect()
}

fn run_training(
    model: &mut DefinitionModel,
    train: Vec<Encoded>,
    val: Vec<Encoded>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    cfg.adam.validate()?;
    let mut adam = cfg.adam.clone();
    let mut anneal = AnnealingState::new(adam.lr, cfg.anneal_factor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, DefinitionModel)> = None;

    for epoch in 0..cfg.epochs {
        // Shuffle, then bucket by definition length so batches pad little.
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&i| train[i].def.len());

        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            model.zero_grad();
            let mut batch_tokens = 0usize;
            for &i in batch {
                let e = &train[i];
                let fwd = model.forward_ids(e.head, &e.ctx, &e.def, true, Some(&mut rng))?;
                epoch_nll += fwd.nlls.iter().sum::<f64>();
                batch_tokens += fwd.nlls.len();
                model.backward(&fwd);
            }
            epoch_tokens += batch_tokens;
            scale_grads(model, 1.0 / batch_tokens as f64);
            clip_global_norm(model, cfg.clip_norm);
            adam.lr = anneal.lr;
            adam_step(model, &mut adam)?;
        }

        let train_ppl = (epoch_nll / epoch_tokens as f64).exp();
        let (val_nll, val_tokens) = if val.is_empty() {
            (epoch_nll, epoch_tokens)
        } else {
            dataset_nll(model, &val)?
        };
        let val_loss = val_nll / val_tokens as f64;
        let val_ppl = val_loss.exp();

        if best.as_ref().map(|(b, _)| val_loss < *b).unwrap_or(true) {
            best = Some((val_loss, model.clone()));
        }
        if cfg.anneal {
            anneal.observe(val_loss);
        }
        history.push(EpochStats {
            epoch: epoch + 1,
            train_ppl,
            val_ppl,
            lr: anneal.lr,
        });
    }

    if let Some((_, best_model)) = best {
        *model = best_model;
    }
    Ok(history)
}

/// Trains on definition entries, retaining the best-validation weights.
pub fn train_definitions(
    model: &mut DefinitionModel,
    train: &[DefinitionEntry],
    val: &[DefinitionEntry],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let train = encode_all(model, train);
    let val = encode_all(model, val);
    run_training(model, train, val, cfg)
}

/// Unconditional language-model pretraining over plain sentences: the model
/// runs with v* = 0 and `<bos>` starts, so the weights transfer directly to
/// conditional fine-tuning. Annealing is disabled.
pub fn pretrain_unconditional(
    model: &mut DefinitionModel,
    sentences: &[Vec<String>],
    val_sentences: &[Vec<String>],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let was_pretraining = model.cfg.pretraining;
    model.cfg.pretraining = true;
    let encode = |ss: &[Vec<String>]| -> Vec<Encoded> {
        ss.iter()
            .filter(|s| !s.is_empty())
            .map(|s| Encoded {
                head: BOS,
                ctx: Vec::new(),
                def: model.vocab.encode(s, false),
            })
            .collect()
    };
    let train = encode(sentences);
    let val = encode(val_sentences);
    let mut cfg = cfg.clone();
    cfg.anneal = false;
    let out = run_training(model, train, val, &cfg);
    model.cfg.pretraining = was_pretraining;
    out
}
