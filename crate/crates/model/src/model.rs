//! Fusion-in-decoder encoder-decoder transformer.
//!
//! Every channel is run through the same encoder on its own, with positions
//! starting again at 0. The per-channel outputs are laid end to end into one
//! [`FusedMemory`] and the decoder cross-attends over all of it at once.
//! Cross-attention gets no positional signal about which channel a memory
//! row came from, so permuting channels permutes memory rows and leaves the
//! decoder output unchanged.
//!
//! Layers are pre-norm. The token embedding is shared by encoder input,
//! decoder input and the output projection; input embeddings are scaled by
//! `sqrt(d_model)`.
//!
//! Initialization (all drawn from a ChaCha8 stream seeded with
//! `config.seed`, in parameter order):
//! - token embedding: uniform with standard deviation 0.02, so initial
//!   logits are close to zero and the initial loss close to `ln(vocab)`;
//! - position tables: uniform with standard deviation `0.02 * sqrt(d_model)`,
//!   the same scale as the scaled token embeddings;
//! - linear weights: Glorot uniform, `±sqrt(6 / (fan_in + fan_out))`;
//! - biases zero, layer-norm gains one.

use std::sync::Mutex;

use candle::{DType, Device, IndexOp, Tensor, Var, D};
use fidconv_core::tokenizer::{BOS, EOS, PAD};
use fidconv_core::{PackedRecord, TokenChannel, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::ops::{gelu, softmax_last};

const MASK_BIAS: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

struct ParamBuilder<'a> {
    rng: ChaCha8Rng,
    dtype: DType,
    device: &'a Device,
    vars: Vec<(String, Var)>,
}

impl<'a> ParamBuilder<'a> {
    fn tensor(&mut self, name: String, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.push((name, var));
        Ok(out)
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.tensor(name, shape, values)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.tensor(name, shape, vec![value; n])
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Linear {
            weight: self.uniform(format!("{name}.weight"), &[fan_in, fan_out], bound)?,
            bias: self.constant(format!("{name}.bias"), &[fan_out], 0.0)?,
        })
    }

    fn layer_norm(&mut self, name: &str, d: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: self.constant(format!("{name}.gain"), &[d], 1.0)?,
            bias: self.constant(format!("{name}.bias"), &[d], 0.0)?,
        })
    }

    fn attention(&mut self, name: &str, cfg: &ModelConfig) -> Result<Attention> {
        let d = cfg.d_model;
        Ok(Attention {
            query: self.linear(&format!("{name}.query"), d, d)?,
            key: self.linear(&format!("{name}.key"), d, d)?,
            value: self.linear(&format!("{name}.value"), d, d)?,
            out: self.linear(&format!("{name}.out"), d, d)?,
            n_heads: cfg.n_heads,
        })
    }

    fn feed_forward(&mut self, name: &str, cfg: &ModelConfig) -> Result<FeedForward> {
        Ok(FeedForward {
            up: self.linear(&format!("{name}.up"), cfg.d_model, cfg.d_ffn)?,
            down: self.linear(&format!("{name}.down"), cfg.d_ffn, cfg.d_model)?,
        })
    }
}

struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut dims = x.dims().to_vec();
        let fan_in = *dims.last().expect("non-scalar input");
        let y = x
            .reshape(((), fan_in))?
            .matmul(&self.weight)?
            .broadcast_add(&self.bias)?;
        *dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(dims)?)
    }
}

struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let log_sum = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&log_sum)?)
}

struct Attention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    n_heads: usize,
}

impl Attention {
    /// (B, L, d) -> (B, H, L, d/H)
    fn heads(&self, proj: &Linear, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        Ok(proj
            .forward(x)?
            .reshape((b, l, self.n_heads, d / self.n_heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    fn key_value(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.heads(&self.key, x)?, self.heads(&self.value, x)?))
    }

    /// `bias` broadcasts to (B, H, Lq, Lk) and is added to the scores.
    fn attend(&self, x: &Tensor, key: &Tensor, value: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, lq, d) = x.dims3()?;
        let scale = 1.0 / ((d / self.n_heads) as f64).sqrt();
        let q = (self.heads(&self.query, x)? * scale)?;
        let scores = q.matmul(&key.t()?)?.broadcast_add(bias)?;
        let ctx = softmax_last(&scores)?
            .matmul(value)?
            .transpose(1, 2)?
            .reshape((b, lq, d))?;
        self.out.forward(&ctx)
    }

    fn self_attend(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (k, v) = self.key_value(x)?;
        self.attend(x, &k, &v, bias)
    }
}

struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&gelu(&self.up.forward(x)?)?)
    }
}

struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: Attention,
    norm_cross: LayerNorm,
    cross_attn: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Concatenated per-channel encoder outputs for a batch of examples.
///
/// Channel slot `i` is padded to `lens[i]` (the longest channel `i` in the
/// batch) and occupies rows `offsets[i] .. offsets[i] + lens[i]` of every
/// `hidden[b]`.
#[derive(Debug, Clone)]
pub struct FusedMemory {
    /// (batch, sum of lens, d_model)
    pub hidden: Tensor,
    /// (batch, sum of lens); 1 for real tokens, 0 for PAD.
    pub mask: Tensor,
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl FusedMemory {
    pub fn batch_size(&self) -> usize {
        self.hidden.dim(0).unwrap_or(0)
    }

    pub fn n_channels(&self) -> usize {
        self.lens.len()
    }

    pub fn len(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of channel `channel` for batch row `row`: (lens[channel], d_model).
    pub fn block(&self, row: usize, channel: usize) -> Result<Tensor> {
        Ok(self
            .hidden
            .i(row)?
            .narrow(0, self.offsets[channel], self.lens[channel])?)
    }
}

/// Cross-attention keys and values for every decoder layer, computed once per
/// memory.
pub struct MemoryCache {
    layers: Vec<(Tensor, Tensor)>,
    bias: Tensor,
}

impl MemoryCache {
    fn select(&self, row: usize) -> Result<MemoryCache> {
        let pick = |t: &Tensor| t.narrow(0, row, 1);
        Ok(MemoryCache {
            layers: self
                .layers
                .iter()
                .map(|(k, v)| Ok((pick(k)?, pick(v)?)))
                .collect::<Result<_>>()?,
            bias: pick(&self.bias)?,
        })
    }

    fn repeat(&self, n: usize) -> Result<MemoryCache> {
        let rep = |t: &Tensor| -> Result<Tensor> {
            let mut dims = t.dims().to_vec();
            dims[0] = n;
            Ok(t.broadcast_as(dims)?.contiguous()?)
        };
        Ok(MemoryCache {
            layers: self
                .layers
                .iter()
                .map(|(k, v)| Ok((rep(k)?, rep(v)?)))
                .collect::<Result<_>>()?,
            bias: rep(&self.bias)?,
        })
    }
}

/// Decoder inputs and labels for a batch of targets.
pub struct TargetBatch {
    /// (B, T): BOS followed by the target tokens.
    pub input: Tensor,
    /// (B, T): target tokens followed by EOS, PAD beyond.
    pub labels: Tensor,
    /// (B, T): 1 where `labels` is not PAD.
    pub label_mask: Tensor,
}

pub struct FidModel {
    config: ModelConfig,
    device: Device,
    dtype: DType,
    vars: Vec<(String, Var)>,
    embed: Tensor,
    enc_pos: Tensor,
    dec_pos: Tensor,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    dropout_rng: Mutex<ChaCha8Rng>,
}

impl FidModel {
    pub fn new(config: &ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let cfg = config;
        let d = cfg.d_model;
        let mut pb = ParamBuilder {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            dtype,
            device,
            vars: Vec::new(),
        };
        let emb_bound = 0.02 * 3f64.sqrt();
        let embed = pb.uniform("embed".into(), &[cfg.vocab_size, d], emb_bound)?;
        let pos_bound = emb_bound * (d as f64).sqrt();
        let enc_pos = pb.uniform("enc_pos".into(), &[cfg.max_positions, d], pos_bound)?;
        let dec_pos = pb.uniform("dec_pos".into(), &[cfg.max_target_len, d], pos_bound)?;
        let mut encoder = Vec::with_capacity(cfg.n_enc_layers);
        for i in 0..cfg.n_enc_layers {
            let p = format!("encoder.{i}");
            encoder.push(EncoderLayer {
                norm_attn: pb.layer_norm(&format!("{p}.norm_attn"), d)?,
                attn: pb.attention(&format!("{p}.attn"), cfg)?,
                norm_ffn: pb.layer_norm(&format!("{p}.norm_ffn"), d)?,
                ffn: pb.feed_forward(&format!("{p}.ffn"), cfg)?,
            });
        }
        let enc_norm = pb.layer_norm("encoder.norm", d)?;
        let mut decoder = Vec::with_capacity(cfg.n_dec_layers);
        for i in 0..cfg.n_dec_layers {
            let p = format!("decoder.{i}");
            decoder.push(DecoderLayer {
                norm_self: pb.layer_norm(&format!("{p}.norm_self"), d)?,
                self_attn: pb.attention(&format!("{p}.self_attn"), cfg)?,
                norm_cross: pb.layer_norm(&format!("{p}.norm_cross"), d)?,
                cross_attn: pb.attention(&format!("{p}.cross_attn"), cfg)?,
                norm_ffn: pb.layer_norm(&format!("{p}.norm_ffn"), d)?,
                ffn: pb.feed_forward(&format!("{p}.ffn"), cfg)?,
            });
        }
        let dec_norm = pb.layer_norm("decoder.norm", d)?;
        Ok(FidModel {
            config: cfg.clone(),
            device: device.clone(),
            dtype,
            vars: pb.vars,
            embed,
            enc_pos,
            dec_pos,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            dropout_rng: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b)),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Named trainable parameters, in initialization order.
    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Flattened copy of every parameter, for equality checks.
    pub fn parameter_values(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (_, v) in &self.vars {
            out.extend(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    fn dropout(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let p = self.config.dropout;
        if !train || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let values: Vec<f64> = {
            let mut rng = self.dropout_rng.lock().expect("dropout rng poisoned");
            (0..x.elem_count())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        let mask = Tensor::from_vec(values, x.shape(), &self.device)?.to_dtype(self.dtype)?;
        Ok((x * mask)?)
    }

    fn key_bias(&self, mask: &Tensor) -> Result<Tensor> {
        // (B, Lk) -> (B, 1, 1, Lk): 0 for real keys, MASK_BIAS for padding
        let (b, l) = mask.dims2()?;
        Ok(((mask - 1.0)? * -MASK_BIAS)?.reshape((b, 1, 1, l))?)
    }

    fn causal_bias(&self, t: usize) -> Result<Tensor> {
        let values: Vec<f64> = (0..t)
            .flat_map(|i| (0..t).map(move |j| if j > i { MASK_BIAS } else { 0.0 }))
            .collect();
        Ok(Tensor::from_vec(values, (1, 1, t, t), &self.device)?.to_dtype(self.dtype)?)
    }

    fn embed_tokens(&self, ids: &Tensor, positions: &Tensor) -> Result<Tensor> {
        let (n, l) = ids.dims2()?;
        let d = self.config.d_model;
        let tokens = (self.embed.index_select(&ids.flatten_all()?, 0)?.reshape((n, l, d))? * (d as f64).sqrt())?;
        Ok(tokens.broadcast_add(&positions.narrow(0, 0, l)?)?)
    }

    /// Runs the shared encoder over (N, L) ids with an (N, L) mask.
    fn encode_ids(&self, ids: &Tensor, mask: &Tensor, train: bool) -> Result<Tensor> {
        let bias = self.key_bias(mask)?;
        let mut x = self.dropout(&self.embed_tokens(ids, &self.enc_pos)?, train)?;
        for layer in &self.encoder {
            let h = layer.attn.self_attend(&layer.norm_attn.forward(&x)?, &bias)?;
            x = (x + self.dropout(&h, train)?)?;
            let h = layer.ffn.forward(&layer.norm_ffn.forward(&x)?)?;
            x = (x + self.dropout(&h, train)?)?;
        }
        self.enc_norm.forward(&x)
    }

    /// Encodes every channel of every example with the shared encoder and
    /// concatenates each example's channel encodings. Channel slots are
    /// encoded as separate groups so each is padded only to its own longest
    /// member.
    pub fn encode_batch(&self, batch: &[&[TokenChannel]], train: bool) -> Result<FusedMemory> {
        let n_channels = batch.first().map_or(0, |c| c.len());
        for channels in batch {
            if channels.len() != n_channels || n_channels == 0 {
                return Err(ModelError::ChannelCountMismatch {
                    expected: n_channels,
                    found: channels.len(),
                });
            }
            for (i, ch) in channels.iter().enumerate() {
                if ch.len() > self.config.max_positions {
                    return Err(ModelError::ChannelTooLong {
                        channel: i,
                        len: ch.len(),
                        max: self.config.max_positions,
                    });
                }
            }
        }
        let b = batch.len();
        let mut hidden = Vec::with_capacity(n_channels);
        let mut masks = Vec::with_capacity(n_channels);
        let mut offsets = Vec::with_capacity(n_channels);
        let mut lens = Vec::with_capacity(n_channels);
        let mut offset = 0;
        for slot in 0..n_channels {
            let len = batch.iter().map(|c| c[slot].len()).max().unwrap_or(0).max(1);
            let mut ids = Vec::with_capacity(b * len);
            let mut mask = Vec::with_capacity(b * len);
            for channels in batch {
                let real = channels[slot].real_ids();
                ids.extend_from_slice(real);
                ids.extend(std::iter::repeat_n(PAD, len - real.len()));
                mask.extend(std::iter::repeat_n(1.0, real.len()));
                mask.extend(std::iter::repeat_n(0.0, len - real.len()));
            }
            let ids = Tensor::from_vec(ids, (b, len), &self.device)?;
            let mask = Tensor::from_vec(mask, (b, len), &self.device)?.to_dtype(self.dtype)?;
            hidden.push(self.encode_ids(&ids, &mask, train)?);
            masks.push(mask);
            offsets.push(offset);
            lens.push(len);
            offset += len;
        }
        Ok(FusedMemory {
            hidden: Tensor::cat(&hidden, 1)?,
            mask: Tensor::cat(&masks, 1)?,
            offsets,
            lens,
        })
    }

    /// Fused memory for a single example.
    pub fn encode_channels(&self, channels: &[TokenChannel]) -> Result<FusedMemory> {
        self.encode_batch(&[channels], false)
    }

    pub fn memory_cache(&self, memory: &FusedMemory) -> Result<MemoryCache> {
        let layers = self
            .decoder
            .iter()
            .map(|layer| layer.cross_attn.key_value(&memory.hidden))
            .collect::<Result<_>>()?;
        Ok(MemoryCache {
            layers,
            bias: self.key_bias(&memory.mask)?,
        })
    }

    /// (B, T) prefix ids -> (B, T, vocab) logits.
    pub fn decode_cached(&self, cache: &MemoryCache, prefix: &Tensor, train: bool) -> Result<Tensor> {
        let (_, t) = prefix.dims2()?;
        let causal = self.causal_bias(t)?;
        let mut x = self.dropout(&self.embed_tokens(prefix, &self.dec_pos)?, train)?;
        for (layer, (k, v)) in self.decoder.iter().zip(&cache.layers) {
            let h = layer.self_attn.self_attend(&layer.norm_self.forward(&x)?, &causal)?;
            x = (x + self.dropout(&h, train)?)?;
            let h = layer
                .cross_attn
                .attend(&layer.norm_cross.forward(&x)?, k, v, &cache.bias)?;
            x = (x + self.dropout(&h, train)?)?;
            let h = layer.ffn.forward(&layer.norm_ffn.forward(&x)?)?;
            x = (x + self.dropout(&h, train)?)?;
        }
        let h = self.dec_norm.forward(&x)?;
        let (b, t, d) = h.dims3()?;
        Ok(h.reshape((b * t, d))?
            .matmul(&self.embed.t()?)?
            .reshape((b, t, self.config.vocab_size))?)
    }

    /// Logits (T, vocab) for a single-example memory and a BOS-initial prefix.
    pub fn decode_logits(&self, memory: &FusedMemory, prefix: &[TokenId]) -> Result<Tensor> {
        let cache = self.memory_cache(memory)?;
        let prefix = Tensor::from_vec(prefix.to_vec(), (1, prefix.len()), &self.device)?;
        Ok(self.decode_cached(&cache, &prefix, false)?.squeeze(0)?)
    }

    /// Teacher-forcing tensors. Targets are cut to `output_len - 1` tokens so
    /// that, with EOS, no label row exceeds `output_len`.
    pub fn target_batch(&self, targets: &[&[TokenId]], output_len: usize) -> Result<TargetBatch> {
        let keep = output_len.saturating_sub(1).min(self.config.max_target_len - 1);
        let t = targets.iter().map(|x| x.len().min(keep)).max().unwrap_or(0) + 1;
        let mut input = Vec::with_capacity(targets.len() * t);
        let mut labels = Vec::with_capacity(targets.len() * t);
        for target in targets {
            let body = &target[..target.len().min(keep)];
            input.push(BOS);
            input.extend_from_slice(body);
            input.extend(std::iter::repeat_n(PAD, t - 1 - body.len()));
            labels.extend_from_slice(body);
            labels.push(EOS);
            labels.extend(std::iter::repeat_n(PAD, t - 1 - body.len()));
        }
        let shape = (targets.len(), t);
        let mask: Vec<f64> = labels.iter().map(|&l| if l == PAD { 0.0 } else { 1.0 }).collect();
        Ok(TargetBatch {
            input: Tensor::from_vec(input, shape, &self.device)?,
            labels: Tensor::from_vec(labels, shape, &self.device)?,
            label_mask: Tensor::from_vec(mask, shape, &self.device)?.to_dtype(self.dtype)?,
        })
    }

    /// Mean token cross-entropy over non-PAD labels.
    pub fn loss(&self, batch: &[&PackedRecord], output_len: usize, train: bool) -> Result<Tensor> {
        let channels: Vec<&[TokenChannel]> = batch.iter().map(|r| r.channels.as_slice()).collect();
        let targets: Vec<&[TokenId]> = batch.iter().map(|r| r.target_ids.as_slice()).collect();
        let memory = self.encode_batch(&channels, train)?;
        let cache = self.memory_cache(&memory)?;
        let tb = self.target_batch(&targets, output_len)?;
        let logits = self.decode_cached(&cache, &tb.input, train)?;
        let log_probs = log_softmax_last(&logits)?;
        let picked = log_probs
            .gather(&tb.labels.unsqueeze(D::Minus1)?, D::Minus1)?
            .squeeze(D::Minus1)?;
        let total = (picked * &tb.label_mask)?.sum_all()?;
        let count = tb.label_mask.sum_all()?;
        Ok(total.neg()?.div(&count)?)
    }

    /// Greedy decoding for every row of `memory`. Returned sequences exclude
    /// BOS and EOS and hold at most `max_len` tokens.
    pub fn greedy(&self, memory: &FusedMemory, max_len: usize) -> Result<Vec<Vec<TokenId>>> {
        let cache = self.memory_cache(memory)?;
        let b = memory.batch_size();
        let max_len = max_len.min(self.config.max_target_len);
        let mut seqs: Vec<Vec<TokenId>> = vec![vec![BOS]; b];
        let mut done = vec![false; b];
        for step in 0..max_len {
            let t = step + 1;
            let flat: Vec<TokenId> = seqs.iter().flatten().copied().collect();
            let prefix = Tensor::from_vec(flat, (b, t), &self.device)?;
            let logits = self.decode_cached(&cache, &prefix, false)?;
            let last = logits.i((.., t - 1, ..))?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            for (row, seq) in seqs.iter_mut().enumerate() {
                if done[row] {
                    seq.push(PAD);
                    continue;
                }
                let next = argmax(&last[row]);
                seq.push(next);
                done[row] = next == EOS;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(seqs.into_iter().map(strip_generated).collect())
    }

    /// Beam search for batch row `row`; returns the completed hypothesis with
    /// the highest total log-probability (or the best unfinished one if none
    /// completes within `max_len`).
    pub fn beam(&self, memory: &FusedMemory, row: usize, width: usize, max_len: usize) -> Result<Vec<TokenId>> {
        let width = width.max(1);
        let max_len = max_len.min(self.config.max_target_len);
        let base = self.memory_cache(memory)?.select(row)?;
        let mut live: Vec<(Vec<TokenId>, f64)> = vec![(vec![BOS], 0.0)];
        let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
        for step in 0..max_len {
            let t = step + 1;
            let n = live.len();
            let cache = base.repeat(n)?;
            let flat: Vec<TokenId> = live.iter().flat_map(|(s, _)| s.iter().copied()).collect();
            let prefix = Tensor::from_vec(flat, (n, t), &self.device)?;
            let logits = self.decode_cached(&cache, &prefix, false)?;
            let last = logits.i((.., t - 1, ..))?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            let mut candidates: Vec<(f64, usize, TokenId)> = Vec::with_capacity(n * width);
            for (b, row_logits) in last.iter().enumerate() {
                let lp = log_softmax_vec(row_logits);
                let mut order: Vec<usize> = (0..lp.len()).collect();
                order.sort_by(|&x, &y| lp[y].total_cmp(&lp[x]).then(x.cmp(&y)));
                for &tok in order.iter().take(width) {
                    candidates.push((live[b].1 + lp[tok], b, tok as TokenId));
                }
            }
            candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut next = Vec::with_capacity(width);
            for (score, b, tok) in candidates.into_iter().take(width) {
                let mut seq = live[b].0.clone();
                seq.push(tok);
                if tok == EOS {
                    finished.push((seq, score));
                } else {
                    next.push((seq, score));
                }
            }
            live = next;
            let best_done = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
            if live.is_empty() || best_done >= best_live {
                break;
            }
        }
        let pool = if finished.is_empty() { &live } else { &finished };
        let best = pool
            .iter()
            .fold(None::<&(Vec<TokenId>, f64)>, |acc, h| match acc {
                Some(a) if a.1 >= h.1 => Some(a),
                _ => Some(h),
            })
            .expect("beam keeps at least one hypothesis");
        Ok(strip_generated(best.0.clone()))
    }
}

fn argmax(xs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as TokenId
}

fn log_softmax_vec(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - max - log_sum).collect()
}

fn strip_generated(seq: Vec<TokenId>) -> Vec<TokenId> {
    seq.into_iter().skip(1).take_while(|&t| t != EOS && t != PAD).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn channel(ids: &[TokenId], padded: usize) -> TokenChannel {
        let mut c = TokenChannel::padding(padded.max(ids.len()));
        c.ids[..ids.len()].copy_from_slice(ids);
        c.mask[..ids.len()].fill(1);
        c
    }

    pub(crate) fn random_record(rng: &mut ChaCha8Rng, n_channels: usize, vocab: usize, max_len: usize) -> PackedRecord {
        crate::gradcheck::random_record(rng, n_channels, vocab, max_len, 4)
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    fn tiny(dtype: DType) -> FidModel {
        FidModel::new(&ModelConfig::tiny(40), dtype, &Device::Cpu).unwrap()
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [ModelConfig::tiny(40), ModelConfig::desk(300)] {
            let model = FidModel::new(&cfg, DType::F32, &Device::Cpu).unwrap();
            assert_eq!(model.parameter_count(), cfg.parameter_count());
        }
        let paper = ModelConfig::paper(50_000);
        let per_layer = 12 * (4 * (1024 * 1024 + 1024) + 2 * 1024 * 4096 + 4096 + 1024 + 2 * 2048);
        assert!(paper.parameter_count() > per_layer);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = tiny(DType::F32).parameter_values().unwrap();
        let b = tiny(DType::F32).parameter_values().unwrap();
        assert_eq!(a, b);
        let other = ModelConfig {
            seed: 1,
            ..ModelConfig::tiny(40)
        };
        let c = FidModel::new(&other, DType::F32, &Device::Cpu)
            .unwrap()
            .parameter_values()
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            d_model: 65,
            ..ModelConfig::desk(100)
        };
        assert!(matches!(
            FidModel::new(&cfg, DType::F32, &Device::Cpu),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn rejects_bad_channels() {
        let model = tiny(DType::F32);
        let long = channel(&[9; 33], 33);
        assert!(matches!(
            model.encode_channels(&[long]),
            Err(ModelError::ChannelTooLong { len: 33, max: 32, .. })
        ));
        let one = [channel(&[9, 10], 4)];
        let two = [channel(&[9, 10], 4), channel(&[11], 4)];
        assert!(matches!(
            model.encode_batch(&[&one, &two], false),
            Err(ModelError::ChannelCountMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn fused_blocks_equal_isolated_encodings() {
        let model = tiny(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 11] {
            let rec = random_record(&mut rng, n, 40, 12);
            let memory = model.encode_channels(&rec.channels).unwrap();
            assert_eq!(memory.n_channels(), n);
            for (i, ch) in rec.channels.iter().enumerate() {
                let alone = model.encode_channels(std::slice::from_ref(ch)).unwrap();
                let real = ch.len();
                let fused = memory.block(0, i).unwrap().narrow(0, 0, real).unwrap();
                let isolated = alone.block(0, 0).unwrap().narrow(0, 0, real).unwrap();
                assert!(max_abs_diff(&fused, &isolated) <= 1e-6);
            }
        }
    }

    #[test]
    fn all_pad_channels_do_not_change_logits() {
        let model = tiny(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rec = random_record(&mut rng, 2, 40, 10);
        let prefix = [BOS, 9, 10, 11];
        let base = model
            .decode_logits(&model.encode_channels(&rec.channels).unwrap(), &prefix)
            .unwrap();
        let mut padded = rec.channels.clone();
        padded.push(TokenChannel::padding(10));
        padded.push(TokenChannel::padding(10));
        let more = model
            .decode_logits(&model.encode_channels(&padded).unwrap(), &prefix)
            .unwrap();
        assert!(max_abs_diff(&base, &more) <= 1e-6);
    }

    #[test]
    fn greedy_is_invariant_to_channel_order() {
        let model = tiny(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rec = random_record(&mut rng, 5, 40, 12);
        let mut reversed = rec.channels.clone();
        reversed.reverse();
        let a = model
            .greedy(&model.encode_channels(&rec.channels).unwrap(), 12)
            .unwrap();
        let b = model.greedy(&model.encode_channels(&reversed).unwrap(), 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beam_of_one_equals_greedy() {
        let model = tiny(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..4 {
            let rec = random_record(&mut rng, 3, 40, 8);
            let memory = model.encode_channels(&rec.channels).unwrap();
            let greedy = model.greedy(&memory, 10).unwrap().remove(0);
            assert_eq!(model.beam(&memory, 0, 1, 10).unwrap(), greedy);
            assert!(greedy.len() <= 10);
        }
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let cfg = ModelConfig::desk(500);
        let model = FidModel::new(&cfg, DType::F32, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let recs: Vec<PackedRecord> = (0..4).map(|_| random_record(&mut rng, 2, 500, 20)).collect();
        let batch: Vec<&PackedRecord> = recs.iter().collect();
        let loss = model.loss(&batch, 128, false).unwrap().to_scalar::<f32>().unwrap() as f64;
        let uniform = (500f64).ln();
        assert!((loss - uniform).abs() / uniform < 0.1, "loss {loss} vs {uniform}");
    }

    #[test]
    fn targets_are_cut_and_terminated() {
        let model = tiny(DType::F32);
        let long: Vec<TokenId> = (10..30).collect();
        let short: Vec<TokenId> = vec![10, 11];
        let tb = model.target_batch(&[&long, &short], 6).unwrap();
        let input = tb.input.to_vec2::<u32>().unwrap();
        let labels = tb.labels.to_vec2::<u32>().unwrap();
        assert_eq!(input[0], vec![BOS, 10, 11, 12, 13, 14]);
        assert_eq!(labels[0], vec![10, 11, 12, 13, 14, EOS]);
        assert_eq!(input[1], vec![BOS, 10, 11, PAD, PAD, PAD]);
        assert_eq!(labels[1], vec![10, 11, EOS, PAD, PAD, PAD]);
        let mask = tb.label_mask.to_vec2::<f32>().unwrap();
        assert_eq!(mask[1], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
