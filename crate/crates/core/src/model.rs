//! The transformer-encoder classifier: token and learned position
//! embeddings, a stack of identical encoder layers (multi-head
//! self-attention and a GELU feed-forward, each with residual then
//! layer-norm), and a linear head over the final CLS hidden state.
//!
//! The forward pass computes over the real (unpadded) prefix of an encoding.
//! Padded key positions would receive a -1e9 score bias, and exp(-1e9 - max)
//! underflows to exactly 0.0 in f32, so their attention weight contributes
//! nothing; dropping them changes no bit of the CLS state while skipping the
//! dead columns. `attention` keeps the explicit mask path for callers that
//! pass padded sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};
use crate::tokenizer::Encoding;

pub const LAYER_NORM_EPS: f32 = 1e-12;
pub const INIT_STD: f32 = 0.02;
pub const MASK_BIAS: f32 = -1e9;
pub const NUM_CLASSES: usize = 2;

fn default_num_classes() -> usize {
    NUM_CLASSES
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
}

impl ModelConfig {
    /// The paper-scale geometry: BERT-base with a 512-token window.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 12,
            hidden_size: 768,
            num_heads: 12,
            ffn_size: 3072,
            max_len: 512,
            vocab_size,
            num_classes: NUM_CLASSES,
        }
    }

    /// Small geometry that trains in minutes on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_size: 64,
            num_heads: 4,
            ffn_size: 256,
            max_len: 128,
            vocab_size,
            num_classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config(format!("max_len {} is below 3", self.max_len)));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the reserved tokens",
                self.vocab_size
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "num_classes is fixed at {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Closed-form parameter count; tests pin it against enumeration.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_size;
        let f = self.ffn_size;
        let per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
        self.vocab_size * h + self.max_len * h + self.num_layers * per_layer + h * self.num_classes
            + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub q_weight: Tensor,
    pub q_bias: Tensor,
    pub k_weight: Tensor,
    pub k_bias: Tensor,
    pub v_weight: Tensor,
    pub v_bias: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub attn_norm_gain: Tensor,
    pub attn_norm_bias: Tensor,
    pub ffn_in_weight: Tensor,
    pub ffn_in_bias: Tensor,
    pub ffn_out_weight: Tensor,
    pub ffn_out_bias: Tensor,
    pub ffn_norm_gain: Tensor,
    pub ffn_norm_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embeddings: Tensor,
    pub position_embeddings: Tensor,
    pub layers: Vec<EncoderLayerParams>,
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
}

impl ModelParams {
    /// Canonical (name, tensor) enumeration. This order defines the Adam
    /// slot layout and the checkpoint tensor table.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("token_embeddings".into(), &self.token_embeddings),
            ("position_embeddings".into(), &self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (field, tensor) in [
                ("q_weight", &layer.q_weight),
                ("q_bias", &layer.q_bias),
                ("k_weight", &layer.k_weight),
                ("k_bias", &layer.k_bias),
                ("v_weight", &layer.v_weight),
                ("v_bias", &layer.v_bias),
                ("out_weight", &layer.out_weight),
                ("out_bias", &layer.out_bias),
                ("attn_norm_gain", &layer.attn_norm_gain),
                ("attn_norm_bias", &layer.attn_norm_bias),
                ("ffn_in_weight", &layer.ffn_in_weight),
                ("ffn_in_bias", &layer.ffn_in_bias),
                ("ffn_out_weight", &layer.ffn_out_weight),
                ("ffn_out_bias", &layer.ffn_out_bias),
                ("ffn_norm_gain", &layer.ffn_norm_gain),
                ("ffn_norm_bias", &layer.ffn_norm_bias),
            ] {
                out.push((format!("layer{i}.{field}"), tensor));
            }
        }
        out.push(("classifier_weight".into(), &self.classifier_weight));
        out.push(("classifier_bias".into(), &self.classifier_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("token_embeddings".into(), &mut self.token_embeddings),
            ("position_embeddings".into(), &mut self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.q_weight"), &mut layer.q_weight));
            out.push((format!("layer{i}.q_bias"), &mut layer.q_bias));
            out.push((format!("layer{i}.k_weight"), &mut layer.k_weight));
            out.push((format!("layer{i}.k_bias"), &mut layer.k_bias));
            out.push((format!("layer{i}.v_weight"), &mut layer.v_weight));
            out.push((format!("layer{i}.v_bias"), &mut layer.v_bias));
            out.push((format!("layer{i}.out_weight"), &mut layer.out_weight));
            out.push((format!("layer{i}.out_bias"), &mut layer.out_bias));
            out.push((format!("layer{i}.attn_norm_gain"), &mut layer.attn_norm_gain));
            out.push((format!("layer{i}.attn_norm_bias"), &mut layer.attn_norm_bias));
            out.push((format!("layer{i}.ffn_in_weight"), &mut layer.ffn_in_weight));
            out.push((format!("layer{i}.ffn_in_bias"), &mut layer.ffn_in_bias));
            out.push((format!("layer{i}.ffn_out_weight"), &mut layer.ffn_out_weight));
            out.push((format!("layer{i}.ffn_out_bias"), &mut layer.ffn_out_bias));
            out.push((format!("layer{i}.ffn_norm_gain"), &mut layer.ffn_norm_gain));
            out.push((format!("layer{i}.ffn_norm_bias"), &mut layer.ffn_norm_bias));
        }
        out.push(("classifier_weight".into(), &mut self.classifier_weight));
        out.push(("classifier_bias".into(), &mut self.classifier_bias));
        out
    }

    pub fn tensor_count(&self) -> usize {
        2 + self.layers.len() * 16 + 2
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// SHA-256 over all tensor bytes in canonical order, little-endian f32.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (_, t) in self.named_tensors() {
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Rebuilds the struct from (name, tensor) pairs in canonical order;
    /// checkpoint loading lands here. Names, order and shapes must all match
    /// what `named_tensors` on a fresh model of this config would produce.
    pub fn from_named_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let expected = expected_shapes(&config);
        if tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this config, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in tensors.iter().zip(&expected) {
            if name != want_name {
                return Err(Error::Checkpoint(format!(
                    "tensor order mismatch: found {name:?}, expected {want_name:?}"
                )));
            }
            if &tensor.shape != want_shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config wants {want_shape:?}",
                    tensor.shape
                )));
            }
        }
        let mut iter = tensors.into_iter().map(|(_, t)| t.with_grad());
        let mut next = || iter.next().expect("length checked above");
        let token_embeddings = next();
        let position_embeddings = next();
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(EncoderLayerParams {
                q_weight: next(),
                q_bias: next(),
                k_weight: next(),
                k_bias: next(),
                v_weight: next(),
                v_bias: next(),
                out_weight: next(),
                out_bias: next(),
                attn_norm_gain: next(),
                attn_norm_bias: next(),
                ffn_in_weight: next(),
                ffn_in_bias: next(),
                ffn_out_weight: next(),
                ffn_out_bias: next(),
                ffn_norm_gain: next(),
                ffn_norm_bias: next(),
            });
        }
        Ok(ModelParams {
            config,
            token_embeddings,
            position_embeddings,
            layers,
            classifier_weight: next(),
            classifier_bias: next(),
        })
    }
}

/// Name and shape of every tensor, in canonical order, for a config.
pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden_size;
    let f = config.ffn_size;
    let mut out = vec![
        ("token_embeddings".to_string(), vec![config.vocab_size, h]),
        ("position_embeddings".to_string(), vec![config.max_len, h]),
    ];
    for i in 0..config.num_layers {
        for (field, shape) in [
            ("q_weight", vec![h, h]),
            ("q_bias", vec![h]),
            ("k_weight", vec![h, h]),
            ("k_bias", vec![h]),
            ("v_weight", vec![h, h]),
            ("v_bias", vec![h]),
            ("out_weight", vec![h, h]),
            ("out_bias", vec![h]),
            ("attn_norm_gain", vec![h]),
            ("attn_norm_bias", vec![h]),
            ("ffn_in_weight", vec![h, f]),
            ("ffn_in_bias", vec![f]),
            ("ffn_out_weight", vec![f, h]),
            ("ffn_out_bias", vec![h]),
            ("ffn_norm_gain", vec![h]),
            ("ffn_norm_bias", vec![h]),
        ] {
            out.push((format!("layer{i}.{field}"), shape));
        }
    }
    out.push(("classifier_weight".to_string(), vec![h, config.num_classes]));
    out.push(("classifier_bias".to_string(), vec![config.num_classes]));
    out
}

/// Weights sampled from a truncated normal (std 0.02, resampled beyond two
/// deviations), biases zero, layer-norm gains one. Deterministic per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let mut trunc_normal = |shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v = normal.sample(&mut rng);
                if v.abs() <= 2.0 * INIT_STD {
                    break v;
                }
            })
            .collect();
        Tensor::new(shape, data).with_grad()
    };
    let h = config.hidden_size;
    let f = config.ffn_size;
    let zeros = |shape: Vec<usize>| Tensor::zeros(shape).with_grad();
    let ones = |n: usize| Tensor::new(vec![n], vec![1.0; n]).with_grad();

    let token_embeddings = trunc_normal(vec![config.vocab_size, h]);
    let position_embeddings = trunc_normal(vec![config.max_len, h]);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(EncoderLayerParams {
            q_weight: trunc_normal(vec![h, h]),
            q_bias: zeros(vec![h]),
            k_weight: trunc_normal(vec![h, h]),
            k_bias: zeros(vec![h]),
            v_weight: trunc_normal(vec![h, h]),
            v_bias: zeros(vec![h]),
            out_weight: trunc_normal(vec![h, h]),
            out_bias: zeros(vec![h]),
            attn_norm_gain: ones(h),
            attn_norm_bias: zeros(vec![h]),
            ffn_in_weight: trunc_normal(vec![h, f]),
            ffn_in_bias: zeros(vec![f]),
            ffn_out_weight: trunc_normal(vec![f, h]),
            ffn_out_bias: zeros(vec![h]),
            ffn_norm_gain: ones(h),
            ffn_norm_bias: zeros(vec![h]),
        });
    }
    Ok(ModelParams {
        config: config.clone(),
        token_embeddings,
        position_embeddings,
        layers,
        classifier_weight: trunc_normal(vec![h, config.num_classes]),
        classifier_bias: zeros(vec![config.num_classes]),
    })
}

/// Taped ids of one layer's tensors.
struct TapedLayer {
    q_weight: TensorId,
    q_bias: TensorId,
    k_weight: TensorId,
    k_bias: TensorId,
    v_weight: TensorId,
    v_bias: TensorId,
    out_weight: TensorId,
    out_bias: TensorId,
    attn_norm_gain: TensorId,
    attn_norm_bias: TensorId,
    ffn_in_weight: TensorId,
    ffn_in_bias: TensorId,
    ffn_out_weight: TensorId,
    ffn_out_bias: TensorId,
    ffn_norm_gain: TensorId,
    ffn_norm_bias: TensorId,
}

/// One example's forward pass recorded on its own tape. `param_ids` aligns
/// with `ModelParams::named_tensors` so gradients map back by position.
pub struct ForwardPass {
    pub tape: Tape,
    pub param_ids: Vec<TensorId>,
    pub logits: TensorId,
}

/// Records embeddings, encoder layers, and the classifier head for the real
/// (unpadded) prefix of `encoding`. See the module docs for why padding can
/// be dropped without changing the logits.
pub fn forward_taped(
    params: &ModelParams,
    encoding: &Encoding,
    requires_grad: bool,
) -> Result<ForwardPass> {
    let config = &params.config;
    if encoding.ids.len() != config.max_len {
        return Err(Error::Input(format!(
            "encoding length {} does not match model max_len {}",
            encoding.ids.len(),
            config.max_len
        )));
    }
    for &id in &encoding.ids {
        if id as usize >= config.vocab_size {
            return Err(Error::Input(format!(
                "token id {id} out of range for vocab_size {}",
                config.vocab_size
            )));
        }
    }

    let mut tape = Tape::new();
    let mut param_ids = Vec::with_capacity(params.tensor_count());
    for (_, tensor) in params.named_tensors() {
        let mut t = tensor.clone();
        t.requires_grad = requires_grad;
        param_ids.push(tape.input(t));
    }
    // param_ids layout: 0 token emb, 1 position emb, then 16 per layer, then
    // classifier weight and bias.
    let layer_ids: Vec<TapedLayer> = (0..config.num_layers)
        .map(|l| {
            let base = 2 + l * 16;
            TapedLayer {
                q_weight: param_ids[base],
                q_bias: param_ids[base + 1],
                k_weight: param_ids[base + 2],
                k_bias: param_ids[base + 3],
                v_weight: param_ids[base + 4],
                v_bias: param_ids[base + 5],
                out_weight: param_ids[base + 6],
                out_bias: param_ids[base + 7],
                attn_norm_gain: param_ids[base + 8],
                attn_norm_bias: param_ids[base + 9],
                ffn_in_weight: param_ids[base + 10],
                ffn_in_bias: param_ids[base + 11],
                ffn_out_weight: param_ids[base + 12],
                ffn_out_bias: param_ids[base + 13],
                ffn_norm_gain: param_ids[base + 14],
                ffn_norm_bias: param_ids[base + 15],
            }
        })
        .collect();
    let classifier_weight = param_ids[param_ids.len() - 2];
    let classifier_bias = param_ids[param_ids.len() - 1];

    let n = encoding.real_len.max(2); // CLS and SEP are always present
    let token_rows: Vec<usize> = encoding.ids[..n].iter().map(|&id| id as usize).collect();
    let position_rows: Vec<usize> = (0..n).collect();
    let tok = tape.gather_rows(param_ids[0], &token_rows);
    let pos = tape.gather_rows(param_ids[1], &position_rows);
    let mut hidden = tape.add(tok, pos);

    for layer in &layer_ids {
        let (attn, _) = attention_sublayer(&mut tape, layer, hidden, None, config);
        let residual = tape.add(hidden, attn);
        hidden = tape.layer_norm(residual, layer.attn_norm_gain, layer.attn_norm_bias, LAYER_NORM_EPS);

        let ffn = ffn_sublayer(&mut tape, layer, hidden);
        let residual = tape.add(hidden, ffn);
        hidden = tape.layer_norm(residual, layer.ffn_norm_gain, layer.ffn_norm_bias, LAYER_NORM_EPS);
    }

    let cls = tape.gather_rows(hidden, &[0]);
    let proj = tape.matmul(cls, classifier_weight);
    let logits = tape.add_row(proj, classifier_bias);
    Ok(ForwardPass {
        tape,
        param_ids,
        logits,
    })
}

/// Multi-head scaled dot-product attention over taped hidden states.
/// `mask`, when given, adds a -1e9 score bias at every masked key column.
/// Returns the output id and each head's softmax weight id.
fn attention_sublayer(
    tape: &mut Tape,
    layer: &TapedLayer,
    hidden: TensorId,
    mask: Option<&[u8]>,
    config: &ModelConfig,
) -> (TensorId, Vec<TensorId>) {
    let head_dim = config.head_dim();
    let scale = 1.0 / (head_dim as f32).sqrt();

    let q_proj = tape.matmul(hidden, layer.q_weight);
    let q = tape.add_row(q_proj, layer.q_bias);
    let k_proj = tape.matmul(hidden, layer.k_weight);
    let k = tape.add_row(k_proj, layer.k_bias);
    let v_proj = tape.matmul(hidden, layer.v_weight);
    let v = tape.add_row(v_proj, layer.v_bias);

    let bias_row = mask.and_then(|m| {
        if m.iter().all(|&b| b == 1) {
            return None;
        }
        let bias: Vec<f32> = m.iter().map(|&b| if b == 1 { 0.0 } else { MASK_BIAS }).collect();
        Some(tape.input(Tensor::new(vec![m.len()], bias)))
    });

    let mut heads = Vec::with_capacity(config.num_heads);
    let mut weight_ids = Vec::with_capacity(config.num_heads);
    for head in 0..config.num_heads {
        let lo = head * head_dim;
        let hi = lo + head_dim;
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let raw_scores = tape.matmul(qh, kt);
        let mut scores = tape.scale(raw_scores, scale);
        if let Some(bias) = bias_row {
            scores = tape.add_row(scores, bias);
        }
        let weights = tape.softmax(scores, 1);
        weight_ids.push(weights);
        heads.push(tape.matmul(weights, vh));
    }
    let merged = tape.concat_cols(&heads);
    let out = tape.matmul(merged, layer.out_weight);
    (tape.add_row(out, layer.out_bias), weight_ids)
}

fn ffn_sublayer(tape: &mut Tape, layer: &TapedLayer, hidden: TensorId) -> TensorId {
    let up = tape.matmul(hidden, layer.ffn_in_weight);
    let up = tape.add_row(up, layer.ffn_in_bias);
    let act = tape.gelu(up);
    let down = tape.matmul(act, layer.ffn_out_weight);
    tape.add_row(down, layer.ffn_out_bias)
}

/// Standalone attention over explicit hidden states, mask included; the
/// building block `forward` applies per layer. Returns [len x hidden].
pub fn attention(
    layer: &EncoderLayerParams,
    hidden_states: &Tensor,
    mask: &[u8],
    config: &ModelConfig,
) -> Tensor {
    attention_with_weights(layer, hidden_states, mask, config).0
}

/// Attention plus each head's [len x len] weight matrix, for inspection.
pub fn attention_with_weights(
    layer: &EncoderLayerParams,
    hidden_states: &Tensor,
    mask: &[u8],
    config: &ModelConfig,
) -> (Tensor, Vec<Tensor>) {
    let len = hidden_states.shape[0];
    assert_eq!(mask.len(), len, "mask length {} vs hidden rows {len}", mask.len());
    let mut tape = Tape::new();
    let hidden = tape.input(hidden_states.clone());
    let taped = TapedLayer {
        q_weight: tape.input(layer.q_weight.clone()),
        q_bias: tape.input(layer.q_bias.clone()),
        k_weight: tape.input(layer.k_weight.clone()),
        k_bias: tape.input(layer.k_bias.clone()),
        v_weight: tape.input(layer.v_weight.clone()),
        v_bias: tape.input(layer.v_bias.clone()),
        out_weight: tape.input(layer.out_weight.clone()),
        out_bias: tape.input(layer.out_bias.clone()),
        attn_norm_gain: 0,
        attn_norm_bias: 0,
        ffn_in_weight: 0,
        ffn_in_bias: 0,
        ffn_out_weight: 0,
        ffn_out_bias: 0,
        ffn_norm_gain: 0,
        ffn_norm_bias: 0,
    };
    let (out, weight_ids) = attention_sublayer(&mut tape, &taped, hidden, Some(mask), config);
    let weights = weight_ids.iter().map(|&id| tape.value(id).clone()).collect();
    (tape.value(out).clone(), weights)
}

/// Logits for one encoding, shape `[2]`. Pure inference; no gradients kept.
pub fn forward(params: &ModelParams, encoding: &Encoding) -> Result<Tensor> {
    let pass = forward_taped(params, encoding, false)?;
    let logits = pass.tape.value(pass.logits);
    Ok(Tensor::new(vec![params.config.num_classes], logits.data.clone()))
}

/// A classification decision with both class probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: Label,
    pub p_ham: f32,
    pub p_spam: f32,
}

impl Classification {
    /// Probability of the predicted class.
    pub fn confidence(&self) -> f32 {
        match self.label {
            Label::Ham => self.p_ham,
            Label::Spam => self.p_spam,
        }
    }
}

/// Softmax over the two logits; exactly equal logits resolve to ham.
pub fn decide(logits: &Tensor) -> Classification {
    assert_eq!(logits.numel(), 2, "decide expects two logits");
    let (a, b) = (logits.data[0], logits.data[1]);
    let max = a.max(b);
    let ea = (a - max).exp();
    let eb = (b - max).exp();
    let z = ea + eb;
    let p_ham = ea / z;
    let p_spam = eb / z;
    let label = if p_spam > p_ham { Label::Spam } else { Label::Ham };
    Classification { label, p_ham, p_spam }
}

/// Tokenize, encode, and classify one text with trained parameters.
pub fn classify(params: &ModelParams, text: &str, vocab: &crate::tokenizer::Vocab) -> Result<Classification> {
    if vocab.len() != params.config.vocab_size {
        return Err(Error::Config(format!(
            "vocab has {} tokens, model wants {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    let encoding = crate::tokenizer::encode(text, vocab, params.config.max_len)?;
    let logits = forward(params, &encoding)?;
    Ok(decide(&logits))
}

/// Mean cross-entropy of a batch, no gradients. The probe side of finite
/// difference checks, and generally the cheapest way to score a batch.
pub fn batch_loss(params: &ModelParams, batch: &[(Encoding, Label)]) -> Result<f32> {
    assert!(!batch.is_empty(), "batch_loss: empty batch");
    let losses: Vec<Result<f32>> = batch
        .par_iter()
        .map(|(encoding, label)| {
            let mut pass = forward_taped(params, encoding, false)?;
            let loss = pass.tape.cross_entropy(pass.logits, &[label.index()]);
            Ok(pass.tape.value(loss).data[0])
        })
        .collect();
    let mut total = 0.0f32;
    for loss in losses {
        total += loss?;
    }
    Ok(total / batch.len() as f32)
}

/// Mean cross-entropy and its gradient for every parameter tensor, aligned
/// with `named_tensors` order. Examples run in parallel; the reduction is a
/// fixed-order sum over example index, then one scale by 1/batch, so results
/// are bitwise stable for any thread count.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &[(Encoding, Label)],
) -> Result<(f32, Vec<Vec<f32>>)> {
    assert!(!batch.is_empty(), "batch_loss_and_grads: empty batch");
    let per_example: Vec<Result<(f32, Vec<Vec<f32>>)>> = batch
        .par_iter()
        .map(|(encoding, label)| {
            let mut pass = forward_taped(params, encoding, true)?;
            let loss = pass.tape.cross_entropy(pass.logits, &[label.index()]);
            let grads = pass.tape.backward(loss);
            let per_param: Vec<Vec<f32>> = pass
                .param_ids
                .iter()
                .map(|&id| grads.get(id).expect("parameters require grad").to_vec())
                .collect();
            Ok((pass.tape.value(loss).data[0], per_param))
        })
        .collect();

    let mut total_loss = 0.0f32;
    let mut summed: Option<Vec<Vec<f32>>> = None;
    for item in per_example {
        let (loss, grads) = item?;
        total_loss += loss;
        match &mut summed {
            None => summed = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv;
                    }
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f32;
    let mut summed = summed.expect("non-empty batch");
    for tensor in &mut summed {
        for v in tensor.iter_mut() {
            *v *= scale;
        }
    }
    Ok((total_loss * scale, summed))
}
