//! Transformer encoder over per-feature tokens with key masking for missing
//! features.
//!
//! A patient with `d` post-encoding columns becomes `d` tokens. Token `i` is
//! the row `[e_i | x_i]`: a one-hot position followed by the scalar value.
//! The tokens are projected to `model_dim`, passed through `n_layers`
//! pre-norm encoder layers, normalized, averaged over the available tokens
//! only, and mapped to `T` logits followed by a softmax.
//!
//! Missing tokens are masked as attention keys in every head. Their own
//! query rows are still computed but never reach the pooled vector, so the
//! output does not depend on what a missing token carries.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureRow;
use crate::error::{Error, Result};
use crate::nn::{cumulative, xavier_uniform, HazardModel, ParamStore};
use crate::tape::{Tape, Var, LAYER_NORM_EPS};
use crate::tensor::Tensor;

fn default_eps() -> f64 {
    LAYER_NORM_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ffn_hidden: usize,
    /// Output length T.
    pub n_bins: usize,
    /// Post-encoding feature count d.
    pub n_features: usize,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

impl SurvivalModelConfig {
    /// 12 layers, 17 heads, 3072 hidden FFN units; width 272 = 17 × 16.
    pub fn paper(n_features: usize, n_bins: usize, seed: u64) -> Self {
        SurvivalModelConfig {
            n_layers: 12,
            n_heads: 17,
            model_dim: 272,
            ffn_hidden: 3072,
            n_bins,
            n_features,
            seed,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    /// Desk-scale profile used by tests and CI.
    pub fn toy(n_features: usize, n_bins: usize, seed: u64) -> Self {
        SurvivalModelConfig {
            n_layers: 2,
            n_heads: 4,
            model_dim: 32,
            ffn_hidden: 64,
            n_bins,
            n_features,
            seed,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return Err(Error::Configuration(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.n_heads
            )));
        }
        if self.n_layers < 1 {
            return Err(Error::Configuration("need at least one encoder layer".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::Configuration(format!(
                "need at least 2 time bins, got {}",
                self.n_bins
            )));
        }
        if self.n_features < 1 || self.ffn_hidden < 1 {
            return Err(Error::Configuration("empty feature set or FFN".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Configuration("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

/// Token matrix `d × (d+1)` and the availability mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub tokens: Tensor,
    pub token_mask: Vec<bool>,
}

/// Builds the positional tokens of one encoded row. Unavailable features get
/// a zero value entry.
pub fn embed_tokens(row: FeatureRow<'_>) -> EncodedSample {
    let d = row.values.len();
    let mut data = vec![0.0; d * (d + 1)];
    for i in 0..d {
        data[i * (d + 1) + i] = 1.0;
        if row.available[i] {
            data[i * (d + 1) + d] = row.values[i];
        }
    }
    EncodedSample {
        tokens: Tensor::matrix(d, d + 1, data).expect("sized by construction"),
        token_mask: row.available.to_vec(),
    }
}

/// Per-bin event probabilities; non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardVector(pub Vec<f64>);

impl HazardVector {
    pub fn cif(&self) -> Vec<f64> {
        cumulative(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerSlots {
    norm1_gain: usize,
    norm1_bias: usize,
    qkv_weight: usize,
    qkv_bias: usize,
    out_weight: usize,
    out_bias: usize,
    norm2_gain: usize,
    norm2_bias: usize,
    ffn1_weight: usize,
    ffn1_bias: usize,
    ffn2_weight: usize,
    ffn2_bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed_weight: usize,
    embed_bias: usize,
    layers: Vec<LayerSlots>,
    final_gain: usize,
    final_bias: usize,
    head_weight: usize,
    head_bias: usize,
}

/// Shapes actually instantiated, read back from the parameter tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ffn_hidden: usize,
    pub output_size: usize,
    pub n_features: usize,
    pub parameter_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: SurvivalModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl EncoderModel {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn new(config: SurvivalModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.n_features;
        let dim = config.model_dim;
        let hid = config.ffn_hidden;
        let mut p = ParamStore::new();

        let embed_weight = p.push("embed.weight", xavier_uniform(&mut rng, d + 1, dim));
        let embed_bias = p.push("embed.bias", Tensor::zeros(&[dim]));
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let name = |s: &str| -> String { format!("layers.{l}.{s}") };
            layers.push(LayerSlots {
                norm1_gain: p.push(name("norm1.gain"), Tensor::full(&[dim], 1.0)),
                norm1_bias: p.push(name("norm1.bias"), Tensor::zeros(&[dim])),
                qkv_weight: p.push(name("attn.qkv.weight"), xavier_uniform(&mut rng, dim, 3 * dim)),
                qkv_bias: p.push(name("attn.qkv.bias"), Tensor::zeros(&[3 * dim])),
                out_weight: p.push(name("attn.out.weight"), xavier_uniform(&mut rng, dim, dim)),
                out_bias: p.push(name("attn.out.bias"), Tensor::zeros(&[dim])),
                norm2_gain: p.push(name("norm2.gain"), Tensor::full(&[dim], 1.0)),
                norm2_bias: p.push(name("norm2.bias"), Tensor::zeros(&[dim])),
                ffn1_weight: p.push(name("ffn.0.weight"), xavier_uniform(&mut rng, dim, hid)),
                ffn1_bias: p.push(name("ffn.0.bias"), Tensor::zeros(&[hid])),
                ffn2_weight: p.push(name("ffn.1.weight"), xavier_uniform(&mut rng, hid, dim)),
                ffn2_bias: p.push(name("ffn.1.bias"), Tensor::zeros(&[dim])),
            });
        }
        let final_gain = p.push("final_norm.gain", Tensor::full(&[dim], 1.0));
        let final_bias = p.push("final_norm.bias", Tensor::zeros(&[dim]));
        let head_weight = p.push("head.weight", xavier_uniform(&mut rng, dim, config.n_bins));
        let head_bias = p.push("head.bias", Tensor::zeros(&[config.n_bins]));

        Ok(EncoderModel {
            config,
            params: p,
            layout: Layout {
                embed_weight,
                embed_bias,
                layers,
                final_gain,
                final_bias,
                head_weight,
                head_bias,
            },
        })
    }

    /// Rebuilds a model from its config and a stored parameter set.
    pub fn from_parts(config: SurvivalModelConfig, params: &ParamStore) -> Result<Self> {
        let mut m = EncoderModel::new(config)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &SurvivalModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        let shape = |i: usize| self.params.get(i).shape().to_vec();
        let embed = shape(self.layout.embed_weight);
        let head = shape(self.layout.head_weight);
        let ffn_hidden = self
            .layout
            .layers
            .first()
            .map_or(0, |l| shape(l.ffn1_weight)[1]);
        Architecture {
            n_layers: self.layout.layers.len(),
            n_heads: self.config.n_heads,
            model_dim: embed[1],
            ffn_hidden,
            output_size: head[1],
            n_features: embed[0] - 1,
            parameter_count: self.params.scalar_count(),
        }
    }

    /// Records the encoder on `tape` for an already embedded sample.
    pub fn forward_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        p: &[Var],
        sample: &EncodedSample,
    ) -> Result<Var> {
        let c = &self.config;
        let d = c.n_features;
        if sample.tokens.shape() != [d, d + 1] || sample.token_mask.len() != d {
            return Err(Error::Contract(format!(
                "sample tokens {:?} / mask {} do not match d = {d}",
                sample.tokens.shape(),
                sample.token_mask.len()
            )));
        }
        if !sample.token_mask.iter().any(|&m| m) {
            return Err(Error::EmptyPool);
        }
        let mask = sample.token_mask.as_slice();
        let eps = c.layer_norm_eps;
        let dim = c.model_dim;
        let dk = c.head_dim();
        let temperature = 1.0 / libm::sqrt(dk as f64);
        let lay = &self.layout;

        let tokens = tape.constant(sample.tokens.clone());
        let h = tape.matmul(tokens, p[lay.embed_weight])?;
        let mut h = tape.add(h, p[lay.embed_bias])?;

        for l in &lay.layers {
            let a = tape.layer_norm_with_eps(h, p[l.norm1_gain], p[l.norm1_bias], eps)?;
            let qkv = tape.matmul(a, p[l.qkv_weight])?;
            let qkv = tape.add(qkv, p[l.qkv_bias])?;
            let mut heads = Vec::with_capacity(c.n_heads);
            for hd in 0..c.n_heads {
                let q = tape.slice_cols(qkv, hd * dk, (hd + 1) * dk)?;
                let k = tape.slice_cols(qkv, dim + hd * dk, dim + (hd + 1) * dk)?;
                let v = tape.slice_cols(qkv, 2 * dim + hd * dk, 2 * dim + (hd + 1) * dk)?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, temperature);
                let w = tape.softmax_with_mask(scores, Some(mask))?;
                heads.push(tape.matmul(w, v)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let o = tape.matmul(cat, p[l.out_weight])?;
            let o = tape.add(o, p[l.out_bias])?;
            h = tape.add(h, o)?;

            let a = tape.layer_norm_with_eps(h, p[l.norm2_gain], p[l.norm2_bias], eps)?;
            let f = tape.matmul(a, p[l.ffn1_weight])?;
            let f = tape.add(f, p[l.ffn1_bias])?;
            let f = tape.relu(f);
            let f = tape.matmul(f, p[l.ffn2_weight])?;
            let f = tape.add(f, p[l.ffn2_bias])?;
            h = tape.add(h, f)?;
        }

        let h = tape.layer_norm_with_eps(h, p[lay.final_gain], p[lay.final_bias], eps)?;
        let pooled = tape.mean_over_masked_rows(h, mask)?;
        let logits = tape.matmul(pooled, p[lay.head_weight])?;
        let logits = tape.add(logits, p[lay.head_bias])?;
        tape.softmax_with_mask(logits, None)
    }

    pub fn forward(&self, sample: &EncodedSample) -> Result<HazardVector> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let y = self.forward_on_tape(&mut tape, &p, sample)?;
        Ok(HazardVector(tape.value(y).data().to_vec()))
    }
}

impl HazardModel for EncoderModel {
    fn n_bins(&self) -> usize {
        self.config.n_bins
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn hazard_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &[Var],
        row: FeatureRow<'_>,
    ) -> Result<Var> {
        if row.values.len() != self.config.n_features {
            return Err(Error::Contract(format!(
                "row has {} features, model expects {}",
                row.values.len(),
                self.config.n_features
            )));
        }
        let sample = embed_tokens(row);
        self.forward_on_tape(tape, params, &sample)
    }

    fn accepts(&self, row: FeatureRow<'_>) -> bool {
        row.available.iter().any(|&a| a)
    }
}
