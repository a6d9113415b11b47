//! The four property transformers and their conditioning encoders.
//!
//! Each model embeds its aligned input channels (one table per channel),
//! adds object-position and, for the triple streams, coordinate embeddings,
//! and runs pre-norm decoder blocks with causal self-attention, optional
//! cross-attention to a conditioning memory, and a GELU feed-forward layer.

pub mod checkpoint;
pub mod config;
pub mod set;
pub mod train;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{Conditioning, TransformerConfig};

use crate::codec::{ModelInput, ModelKind};
use crate::error::{Error, Result};
use crate::numerics::gradcheck::GradCheck;
use crate::numerics::{AttentionMask, Graph, ParamStore, Scalar, Tensor, Var};
use crate::scene::FloorMask;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: impl Into<String>, shape: &[usize], init: Init) {
    out.push(ParamSpec { name: name.into(), shape: shape.to_vec(), init });
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize, init: Init) {
    spec(out, format!("{prefix}.w"), &[fan_in, fan_out], init);
    spec(out, format!("{prefix}.b"), &[fan_out], Init::Zeros);
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    spec(out, format!("{prefix}.g"), &[dim], Init::Ones);
    spec(out, format!("{prefix}.b"), &[dim], Init::Zeros);
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, e: usize) {
    for p in ["q", "k", "v", "o"] {
        linear_specs(out, &format!("{prefix}.{p}"), e, e, Init::Normal(INIT_STD));
    }
}

/// He init.
fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize) {
    let init = Init::Normal((2.0 / (cin * k * k) as f64).sqrt());
    spec(out, format!("{prefix}.w"), &[cout, cin, k, k], init);
    spec(out, format!("{prefix}.b"), &[cout], Init::Zeros);
}

/// Group count of every normalization in the floor encoder.
pub const NORM_GROUPS: usize = 4;

/// Largest group count up to `NORM_GROUPS` dividing `channels`.
pub fn norm_groups(channels: usize) -> usize {
    (1..=NORM_GROUPS).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Residual stages of the floor encoder: (blocks, stride of the first block).
pub const FLOOR_STAGES: [usize; 3] = [3, 3, 4];

/// Every parameter of a model, in creation order.
pub fn param_specs(cfg: &TransformerConfig) -> Vec<ParamSpec> {
    let e = cfg.embed_dim;
    let vocab = cfg.vocab();
    let mut out = Vec::new();
    for ch in cfg.kind.channels() {
        spec(&mut out, format!("embed.{}", ch.name()), &[vocab.size(ch.space()), e], Init::Normal(INIT_STD));
    }
    spec(&mut out, "embed.position", &[cfg.position_rows(), e], Init::Normal(INIT_STD));
    if cfg.kind.is_triple() {
        spec(&mut out, "embed.coord", &[3, e], Init::Normal(INIT_STD));
    }
    let cross = cfg.has_cross_attention();
    for b in 0..cfg.n_blocks {
        let p = format!("block{b}");
        norm_specs(&mut out, &format!("{p}.ln1"), e);
        attention_specs(&mut out, &format!("{p}.self"), e);
        if cross {
            norm_specs(&mut out, &format!("{p}.ln2"), e);
            attention_specs(&mut out, &format!("{p}.cross"), e);
        }
        norm_specs(&mut out, &format!("{p}.ln3"), e);
        linear_specs(&mut out, &format!("{p}.ffn1"), e, cfg.ffn_dim, Init::Normal(INIT_STD));
        linear_specs(&mut out, &format!("{p}.ffn2"), cfg.ffn_dim, e, Init::Normal(INIT_STD));
    }
    norm_specs(&mut out, "final_ln", e);
    linear_specs(&mut out, "head", e, cfg.output_size(), Init::Normal(INIT_STD));
    if cross {
        match cfg.conditioning {
            Conditioning::Shape => floor_specs(cfg, &mut out),
            Conditioning::Text => {
                linear_specs(&mut out, "text.mlp1", cfg.text_dim, e, Init::Normal(INIT_STD));
                linear_specs(&mut out, "text.mlp2", e, e, Init::Normal(INIT_STD));
            }
            Conditioning::None => {}
        }
    }
    out
}

fn floor_specs(cfg: &TransformerConfig, out: &mut Vec<ParamSpec>) {
    let [c1, c2, c3] = cfg.encoder_channels;
    conv_specs(out, "floor.stem1", 1, c1, 3);
    norm_specs(out, "floor.stem1.norm", c1);
    conv_specs(out, "floor.stem2", c1, c1, 3);
    norm_specs(out, "floor.stem2.norm", c1);
    let mut cin = c1;
    for (s, (&blocks, &cout)) in FLOOR_STAGES.iter().zip(&[c1, c2, c3]).enumerate() {
        for b in 0..blocks {
            let p = format!("floor.stage{s}.block{b}");
            let input = if b == 0 { cin } else { cout };
            conv_specs(out, &format!("{p}.conv1"), input, cout, 3);
            norm_specs(out, &format!("{p}.norm1"), cout);
            conv_specs(out, &format!("{p}.conv2"), cout, cout, 3);
            // Zero gain: each block starts as its shortcut.
            spec(out, format!("{p}.norm2.g"), &[cout], Init::Zeros);
            spec(out, format!("{p}.norm2.b"), &[cout], Init::Zeros);
            if b == 0 {
                conv_specs(out, &format!("{p}.shortcut"), input, cout, 1);
            }
        }
        cin = cout;
    }
    linear_specs(out, "floor.proj", c3, cfg.embed_dim, Init::Normal(INIT_STD));
    spec(out, "floor.row", &[cfg.floor_grid(), cfg.embed_dim], Init::Normal(INIT_STD));
    spec(out, "floor.col", &[cfg.floor_grid(), cfg.embed_dim], Init::Normal(INIT_STD));
}

pub fn init_params<T: Scalar>(cfg: &TransformerConfig, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in param_specs(cfg) {
        let n: usize = s.shape.iter().product();
        let data: Vec<T> = match s.init {
            Init::Zeros => vec![T::ZERO; n],
            Init::Ones => vec![T::ONE; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
            }
        };
        store.add(s.name, Tensor::new(s.shape, data).expect("spec shape"));
    }
    store
}

/// Conditioning payload for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    None,
    Floor(FloorMask),
    /// Row-major `[len, dim]` word vectors; unknown words are zero rows.
    Text { vectors: Vec<f32>, len: usize, dim: usize },
}

impl Condition {
    pub fn mode(&self) -> Conditioning {
        match self {
            Condition::None => Conditioning::None,
            Condition::Floor(_) => Conditioning::Shape,
            Condition::Text { .. } => Conditioning::Text,
        }
    }
}

/// Padded streams of several examples of one model kind.
#[derive(Debug, Clone)]
pub struct ModelBatch {
    pub kind: ModelKind,
    pub batch: usize,
    pub len: usize,
    pub tokens: Vec<Vec<u32>>,
    pub positions: Vec<u32>,
    pub coords: Vec<u32>,
    pub targets: Vec<u32>,
}

impl ModelBatch {
    /// Pads every input to the longest one. Masked-out targets become PAD so
    /// the loss ignores them.
    pub fn new(cfg: &TransformerConfig, inputs: &[ModelInput]) -> Result<Self> {
        let kind = cfg.kind;
        if inputs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(bad) = inputs.iter().find(|m| m.kind != kind) {
            return Err(Error::invalid(format!("{} input given to the {} model", bad.kind.name(), kind.name())));
        }
        let len = inputs.iter().map(ModelInput::len).max().unwrap_or(0);
        if len == 0 || len > cfg.max_stream_len() {
            return Err(Error::invalid(format!(
                "stream length {len} outside 1..={} for the {} model",
                cfg.max_stream_len(),
                kind.name()
            )));
        }
        let vocab = cfg.vocab();
        let pad_out = vocab.pad(kind.output_space());
        let channels = kind.channels();
        let mut tokens = vec![Vec::with_capacity(len * inputs.len()); channels.len()];
        let mut positions = Vec::with_capacity(len * inputs.len());
        let mut coords = Vec::with_capacity(len * inputs.len());
        let mut targets = Vec::with_capacity(len * inputs.len());
        for m in inputs {
            let mut m = m.clone();
            m.pad_to(&vocab, len);
            for (dst, src) in tokens.iter_mut().zip(&m.tokens) {
                dst.extend_from_slice(src);
            }
            positions.extend(m.positions.iter().map(|&p| p as u32));
            coords.extend(m.coords.iter().map(|&c| c as u32));
            targets.extend(m.targets.iter().zip(&m.loss_mask).map(|(&t, &keep)| if keep { t } else { pad_out }));
        }
        Ok(Self { kind, batch: inputs.len(), len, tokens, positions, coords, targets })
    }
}

/// A property model: configuration plus weights.
#[derive(Debug, Clone)]
pub struct PropertyModel<T: Scalar = f32> {
    pub config: TransformerConfig,
    pub params: ParamStore<T>,
}

struct Ctx<'g, 'p, T: Scalar> {
    g: &'g mut Graph<'p, T>,
    cache: HashMap<String, Var>,
}

impl<'p, T: Scalar> Ctx<'_, 'p, T> {
    fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.cache.get(name) {
            return Ok(v);
        }
        let id = self.g.store().id(name).ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
        let v = self.g.param(id);
        self.cache.insert(name.to_string(), v);
        Ok(v)
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.g.linear(x, w, Some(b))
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gm = self.p(&format!("{prefix}.g"))?;
        let bt = self.p(&format!("{prefix}.b"))?;
        self.g.layer_norm(x, gm, bt)
    }

    fn conv(&mut self, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.g.conv2d(x, w, Some(b), stride, pad)
    }

    /// Convolution followed by group normalization.
    fn conv_norm(&mut self, x: Var, prefix: &str, norm: &str, stride: usize) -> Result<Var> {
        let y = self.conv(x, prefix, stride, 1)?;
        let channels = self.g.shape(y)[1];
        let gm = self.p(&format!("{norm}.g"))?;
        let bt = self.p(&format!("{norm}.b"))?;
        self.g.group_norm(y, gm, bt, norm_groups(channels))
    }

    fn attend(
        &mut self,
        prefix: &str,
        query: Var,
        memory: Var,
        heads: usize,
        mask: Option<Arc<AttentionMask>>,
    ) -> Result<Var> {
        let q = self.linear(query, &format!("{prefix}.q"))?;
        let k = self.linear(memory, &format!("{prefix}.k"))?;
        let v = self.linear(memory, &format!("{prefix}.v"))?;
        let (q, k, v) = (self.g.split_heads(q, heads)?, self.g.split_heads(k, heads)?, self.g.split_heads(v, heads)?);
        let a = self.g.attention(q, k, v, mask)?;
        let a = self.g.merge_heads(a)?;
        self.linear(a, &format!("{prefix}.o"))
    }
}

/// Encoded conditioning memory `[B, M, E]`; `valid[b][m]` is false for
/// padded text positions.
pub struct Memory {
    pub var: Var,
    pub valid: Option<Vec<Vec<bool>>>,
}

impl PropertyModel<f32> {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self { config, params })
    }
}

/// Memory `[1, M, E]` computed outside a training graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMemory<T: Scalar = f32> {
    pub tensor: Tensor<T>,
    pub valid: Option<Vec<Vec<bool>>>,
}

impl<T: Scalar> PropertyModel<T> {

    /// Wraps loaded weights after checking them against `param_specs`.
    pub fn from_params(config: TransformerConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters for this configuration, found {}",
                specs.len(),
                params.len()
            )));
        }
        for s in &specs {
            let id = params.id(&s.name).ok_or_else(|| Error::invalid(format!("missing parameter `{}`", s.name)))?;
            if params.value(id).shape() != s.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    params.value(id).shape(),
                    s.shape
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn cast<U: Scalar>(&self) -> PropertyModel<U> {
        PropertyModel { config: self.config.clone(), params: self.params.cast() }
    }

    /// Memory for a batch of conditions, or `None` when the model has no
    /// cross-attention (conditions are then ignored).
    pub fn encode_memory<'p>(&self, g: &mut Graph<'p, T>, conds: &[&Condition]) -> Result<Option<Memory>> {
        let cfg = &self.config;
        if let Some(c) = conds.iter().find(|c| c.mode() != cfg.conditioning) {
            return Err(Error::ModeMismatch(format!(
                "{} conditioning given to a {}-conditioned model",
                c.mode().name(),
                cfg.conditioning.name()
            )));
        }
        if !cfg.has_cross_attention() {
            return Ok(None);
        }
        let mut ctx = Ctx { g, cache: HashMap::new() };
        match cfg.conditioning {
            Conditioning::Shape => {
                let masks: Vec<&FloorMask> = conds
                    .iter()
                    .map(|c| match c {
                        Condition::Floor(m) => m,
                        _ => unreachable!(),
                    })
                    .collect();
                Ok(Some(Memory { var: encode_floor(cfg, &mut ctx, &masks)?, valid: None }))
            }
            Conditioning::Text => {
                let texts: Vec<(&[f32], usize, usize)> = conds
                    .iter()
                    .map(|c| match c {
                        Condition::Text { vectors, len, dim } => (vectors.as_slice(), *len, *dim),
                        _ => unreachable!(),
                    })
                    .collect();
                let (var, valid) = encode_text(cfg, &mut ctx, &texts)?;
                Ok(Some(Memory { var, valid: Some(valid) }))
            }
            Conditioning::None => Ok(None),
        }
    }

    /// Logits `[B·T, V]` for a padded batch.
    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p, T>,
        batch: &ModelBatch,
        memory: Option<&Memory>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        if batch.kind != cfg.kind {
            return Err(Error::invalid("batch kind does not match the model"));
        }
        if cfg.has_cross_attention() != memory.is_some() {
            return Err(Error::ModeMismatch(format!(
                "the {} model {} a conditioning memory",
                cfg.kind.name(),
                if cfg.has_cross_attention() { "requires" } else { "does not take" }
            )));
        }
        let mut ctx = Ctx { g, cache: HashMap::new() };
        let (b, t, e) = (batch.batch, batch.len, cfg.embed_dim);
        let mut x: Option<Var> = None;
        for (ch, ids) in cfg.kind.channels().iter().zip(&batch.tokens) {
            let table = ctx.p(&format!("embed.{}", ch.name()))?;
            let emb = ctx.g.embedding(table, ids)?;
            x = Some(match x {
                Some(acc) => ctx.g.add(acc, emb)?,
                None => emb,
            });
        }
        let table = ctx.p("embed.position")?;
        let pos = ctx.g.embedding(table, &batch.positions)?;
        let mut x = ctx.g.add(x.expect("every model has input channels"), pos)?;
        if cfg.kind.is_triple() {
            let table = ctx.p("embed.coord")?;
            let coord = ctx.g.embedding(table, &batch.coords)?;
            x = ctx.g.add(x, coord)?;
        }
        let mut x = ctx.g.reshape(x, &[b, t, e])?;
        let causal = Arc::new(AttentionMask::causal(t));
        let memory_mask = match memory.and_then(|m| m.valid.as_ref()) {
            Some(valid) => Some(Arc::new(AttentionMask::key_padding(t, valid)?)),
            None => None,
        };
        let mut dropout = dropout;
        let rate = cfg.dropout;
        for blk in 0..cfg.n_blocks {
            let p = format!("block{blk}");
            let h = ctx.norm(x, &format!("{p}.ln1"))?;
            let mut a = ctx.attend(&format!("{p}.self"), h, h, cfg.n_heads, Some(causal.clone()))?;
            if let Some(rng) = dropout.as_deref_mut() {
                a = ctx.g.dropout(a, rate, rng);
            }
            x = ctx.g.add(x, a)?;
            if let Some(mem) = memory {
                let h = ctx.norm(x, &format!("{p}.ln2"))?;
                let mut a = ctx.attend(&format!("{p}.cross"), h, mem.var, cfg.n_heads, memory_mask.clone())?;
                if let Some(rng) = dropout.as_deref_mut() {
                    a = ctx.g.dropout(a, rate, rng);
                }
                x = ctx.g.add(x, a)?;
            }
            let h = ctx.norm(x, &format!("{p}.ln3"))?;
            let h = ctx.linear(h, &format!("{p}.ffn1"))?;
            let h = ctx.g.gelu(h);
            let mut h = ctx.linear(h, &format!("{p}.ffn2"))?;
            if let Some(rng) = dropout.as_deref_mut() {
                h = ctx.g.dropout(h, rate, rng);
            }
            x = ctx.g.add(x, h)?;
        }
        let x = ctx.norm(x, "final_ln")?;
        let logits = ctx.linear(x, "head")?;
        ctx.g.reshape(logits, &[b * t, cfg.output_size()])
    }

    /// Mean masked cross-entropy over a batch.
    pub fn loss<'p>(
        &self,
        g: &mut Graph<'p, T>,
        batch: &ModelBatch,
        conds: &[&Condition],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let memory = self.encode_memory(g, conds)?;
        let logits = self.forward(g, batch, memory.as_ref(), dropout)?;
        let pad = self.config.vocab().pad(self.config.kind.output_space());
        g.cross_entropy(logits, &batch.targets, pad)
    }

    /// Finite differences on the batch loss for `per_param` random elements
    /// of every parameter. Every parameter must receive a gradient.
    pub fn check_gradients(
        &self,
        batch: &ModelBatch,
        conds: &[&Condition],
        per_param: usize,
        seed: u64,
    ) -> Result<GradCheck> {
        let m = self.cast::<f64>();
        let loss_of = |model: &PropertyModel<f64>| -> Result<f64> {
            let mut g = Graph::new(&model.params);
            let l = model.loss(&mut g, batch, conds, None)?;
            Ok(g.value(l)[0])
        };
        let mut g = Graph::new(&m.params);
        let l = m.loss(&mut g, batch, conds, None)?;
        let grads = g.backward(l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Small step: bias perturbations move many ReLU inputs at once.
        let h = 1e-6;
        let mut report = GradCheck::default();
        for id in m.params.ids() {
            let name = &m.params.get(id).name;
            let analytic = grads.param(id).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            for _ in 0..per_param.min(analytic.len()) {
                let e = rng.gen_range(0..analytic.len());
                let mut plus = m.clone();
                plus.params.get_mut(id).value.data_mut()[e] += h;
                let mut minus = m.clone();
                minus.params.get_mut(id).value.data_mut()[e] -= h;
                let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
                report.record(|| format!("{name}[{e}]"), analytic[e], numeric, 1e-8);
            }
        }
        Ok(report)
    }

    /// Inference logits `[B·T, V]` for `inputs`, padded to a common length.
    pub fn logits(&self, inputs: &[ModelInput], conds: &[&Condition]) -> Result<Tensor<T>> {
        let batch = ModelBatch::new(&self.config, inputs)?;
        let mut g = Graph::inference(&self.params);
        let memory = self.encode_memory(&mut g, conds)?;
        let out = self.forward(&mut g, &batch, memory.as_ref(), None)?;
        Ok(g.tensor(out))
    }

    /// Conditioning memory of one example, detached from any graph so it can
    /// be reused across decoding steps.
    pub fn encode_condition(&self, cond: &Condition) -> Result<Option<EncodedMemory<T>>> {
        let mut g = Graph::inference(&self.params);
        Ok(self
            .encode_memory(&mut g, &[cond])?
            .map(|m| EncodedMemory { tensor: g.tensor(m.var), valid: m.valid }))
    }

    /// Inference logits `[T, V]` of one example against a cached memory.
    pub fn logits_with_memory(&self, input: &ModelInput, memory: Option<&EncodedMemory<T>>) -> Result<Tensor<T>> {
        let batch = ModelBatch::new(&self.config, std::slice::from_ref(input))?;
        let mut g = Graph::inference(&self.params);
        let memory = memory.map(|m| Memory { var: g.input(m.tensor.clone()), valid: m.valid.clone() });
        let out = self.forward(&mut g, &batch, memory.as_ref(), None)?;
        Ok(g.tensor(out))
    }

    /// Logits of a single example at stream slot `slot`.
    pub fn logits_at(&self, input: &ModelInput, cond: &Condition, slot: usize) -> Result<Vec<T>> {
        if slot >= input.len() {
            return Err(Error::invalid(format!("slot {slot} outside a stream of length {}", input.len())));
        }
        let all = self.logits(std::slice::from_ref(input), &[cond])?;
        let v = self.config.output_size();
        Ok(all.data()[slot * v..(slot + 1) * v].to_vec())
    }
}

fn encode_floor<T: Scalar>(cfg: &TransformerConfig, ctx: &mut Ctx<'_, '_, T>, masks: &[&FloorMask]) -> Result<Var> {
    let r = cfg.floor_resolution;
    let mut data = Vec::with_capacity(masks.len() * r * r);
    for m in masks {
        if m.resolution() != r {
            return Err(Error::shape(format!("floor mask is {0}x{0}, the encoder expects {r}x{r}", m.resolution())));
        }
        data.extend(m.pixels().iter().map(|&p| if p { T::ONE } else { T::ZERO }));
    }
    let x = ctx.g.input(Tensor::new(vec![masks.len(), 1, r, r], data)?);
    let x = ctx.conv_norm(x, "floor.stem1", "floor.stem1.norm", 2)?;
    let x = ctx.g.relu(x);
    let x = ctx.conv_norm(x, "floor.stem2", "floor.stem2.norm", 2)?;
    let mut x = ctx.g.relu(x);
    for (s, &blocks) in FLOOR_STAGES.iter().enumerate() {
        for b in 0..blocks {
            let p = format!("floor.stage{s}.block{b}");
            let stride = if b == 0 { 2 } else { 1 };
            let h = ctx.conv_norm(x, &format!("{p}.conv1"), &format!("{p}.norm1"), stride)?;
            let h = ctx.g.relu(h);
            let h = ctx.conv_norm(h, &format!("{p}.conv2"), &format!("{p}.norm2"), 1)?;
            let sc = if b == 0 { ctx.conv(x, &format!("{p}.shortcut"), stride, 0)? } else { x };
            let sum = ctx.g.add(h, sc)?;
            x = ctx.g.relu(sum);
        }
    }
    let seq = ctx.g.nchw_to_seq(x)?;
    let seq = ctx.linear(seq, "floor.proj")?;
    let grid = cfg.floor_grid();
    let rows: Vec<u32> = (0..grid * grid).map(|i| (i / grid) as u32).collect();
    let cols: Vec<u32> = (0..grid * grid).map(|i| (i % grid) as u32).collect();
    let (rt, ct) = (ctx.p("floor.row")?, ctx.p("floor.col")?);
    let re = ctx.g.embedding(rt, &rows)?;
    let ce = ctx.g.embedding(ct, &cols)?;
    let coord = ctx.g.add(re, ce)?;
    ctx.g.add_broadcast(seq, coord)
}

fn encode_text<T: Scalar>(
    cfg: &TransformerConfig,
    ctx: &mut Ctx<'_, '_, T>,
    texts: &[(&[f32], usize, usize)],
) -> Result<(Var, Vec<Vec<bool>>)> {
    let d = cfg.text_dim;
    let mut longest = 0;
    for &(v, len, dim) in texts {
        if dim != d {
            return Err(Error::shape(format!("word vectors have width {dim}, the model expects {d}")));
        }
        if len == 0 {
            return Err(Error::invalid("empty text"));
        }
        if len > cfg.max_text_len || v.len() != len * dim {
            return Err(Error::shape(format!("text of {len} tokens exceeds the limit of {}", cfg.max_text_len)));
        }
        longest = longest.max(len);
    }
    let mut data = vec![T::ZERO; texts.len() * longest * d];
    let mut valid = Vec::with_capacity(texts.len());
    for (i, &(v, len, _)) in texts.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            data[i * longest * d + j] = T::from_f64(x as f64);
        }
        valid.push((0..longest).map(|j| j < len).collect::<Vec<_>>());
    }
    let x = ctx.g.input(Tensor::new(vec![texts.len(), longest, d], data)?);
    let h = ctx.linear(x, "text.mlp1")?;
    let h = ctx.g.gelu(h);
    let h = ctx.linear(h, "text.mlp2")?;
    Ok((h, valid))
}

