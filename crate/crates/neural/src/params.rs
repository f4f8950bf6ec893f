//! Encoder configuration and the flat parameter buffer.
//!
//! All weights of one encoder live in a single vector; a [`Layout`] names
//! the slice of each tensor. Gradients and optimizer moments use the same
//! layout, so updates are plain element-wise loops.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::NeuralError;

pub const SEGMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            ffn_mult: 4,
            max_len: 256,
            vocab_size: 0,
            dropout: 0.1,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.max_len < 3 {
            return bad("n_layers, ffn_mult must be positive and max_len at least 3");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the four special tokens");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.init_std <= 0.0 {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    /// Fused query/key/value projection, `d × 3d`.
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub w_ffn_in: Range<usize>,
    pub b_ffn_in: Range<usize>,
    pub w_ffn_out: Range<usize>,
    pub b_ffn_out: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub token_emb: Range<usize>,
    pub position_emb: Range<usize>,
    pub segment_emb: Range<usize>,
    pub emb_ln_gain: Range<usize>,
    pub emb_ln_bias: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

/// How a tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    next: usize,
    tensors: Vec<(String, Vec<usize>, Range<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> Range<usize> {
        let n: usize = shape.iter().product();
        let r = self.next..self.next + n;
        self.next += n;
        self.tensors.push((name, shape, r.clone(), init));
        r
    }
}

/// Named tensor entry: name, shape, slice of the flat buffer.
pub type TensorEntry = (String, Vec<usize>, Range<usize>);

type InitEntry = (String, Vec<usize>, Range<usize>, Init);

fn build(config: &EncoderConfig) -> (Layout, Vec<InitEntry>) {
    let d = config.d_model;
    let f = config.ffn_dim();
    let mut b = Builder {
        next: 0,
        tensors: Vec::new(),
    };
    let token_emb = b.add("embeddings.token".into(), vec![config.vocab_size, d], Init::Normal);
    let position_emb = b.add("embeddings.position".into(), vec![config.max_len, d], Init::Normal);
    let segment_emb = b.add("embeddings.segment".into(), vec![SEGMENTS, d], Init::Normal);
    let emb_ln_gain = b.add("embeddings.norm.gain".into(), vec![d], Init::Ones);
    let emb_ln_bias = b.add("embeddings.norm.bias".into(), vec![d], Init::Zeros);
    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        layers.push(LayerLayout {
            w_qkv: b.add(p("attention.qkv.weight"), vec![d, 3 * d], Init::Normal),
            b_qkv: b.add(p("attention.qkv.bias"), vec![3 * d], Init::Zeros),
            w_out: b.add(p("attention.out.weight"), vec![d, d], Init::Normal),
            b_out: b.add(p("attention.out.bias"), vec![d], Init::Zeros),
            ln1_gain: b.add(p("attention.norm.gain"), vec![d], Init::Ones),
            ln1_bias: b.add(p("attention.norm.bias"), vec![d], Init::Zeros),
            w_ffn_in: b.add(p("ffn.in.weight"), vec![d, f], Init::Normal),
            b_ffn_in: b.add(p("ffn.in.bias"), vec![f], Init::Zeros),
            w_ffn_out: b.add(p("ffn.out.weight"), vec![f, d], Init::Normal),
            b_ffn_out: b.add(p("ffn.out.bias"), vec![d], Init::Zeros),
            ln2_gain: b.add(p("ffn.norm.gain"), vec![d], Init::Ones),
            ln2_bias: b.add(p("ffn.norm.bias"), vec![d], Init::Zeros),
        });
    }
    let head_w = b.add("head.weight".into(), vec![d], Init::Normal);
    let head_b = b.add("head.bias".into(), vec![1], Init::Zeros);
    let layout = Layout {
        token_emb,
        position_emb,
        segment_emb,
        emb_ln_gain,
        emb_ln_bias,
        layers,
        head_w,
        head_b,
        total: b.next,
    };
    (layout, b.tensors)
}

impl Layout {
    pub fn new(config: &EncoderConfig) -> Self {
        build(config).0
    }

    /// Every tensor in buffer order.
    pub fn tensors(config: &EncoderConfig) -> Vec<TensorEntry> {
        build(config)
            .1
            .into_iter()
            .map(|(n, s, r, _)| (n, s, r))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub config: EncoderConfig,
    pub layout: Layout,
    pub data: Vec<T>,
    /// Set once a unit is fixed; the optimizer refuses to touch it.
    pub frozen: bool,
}

impl<T: Scalar> EncoderParams<T> {
    /// Gaussian weights, zero biases, unit layer-norm gains; deterministic
    /// in `config.seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self, NeuralError> {
        config.validate()?;
        let (layout, tensors) = build(config);
        let mut data = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| NeuralError::Config(e.to_string()))?;
        for (_, _, range, init) in &tensors {
            for v in &mut data[range.clone()] {
                *v = match init {
                    Init::Normal => T::from_f64_lossy(normal.sample(&mut rng)),
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                };
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
            frozen: false,
        })
    }

    pub fn from_data(config: &EncoderConfig, data: Vec<T>, frozen: bool) -> Result<Self, NeuralError> {
        config.validate()?;
        let layout = Layout::new(config);
        if data.len() != layout.total {
            return Err(NeuralError::Config(format!(
                "expected {} parameters, found {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
            frozen,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, r: &Range<usize>) -> &[T] {
        &self.data[r.clone()]
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().expect("finite")))
                .collect(),
            frozen: self.frozen,
        }
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }
}

impl EncoderParams<f32> {
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// SHA-256 of the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        Sha256::digest(self.to_le_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
