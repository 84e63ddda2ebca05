//! Small pre-norm encoder-decoder Transformer on the autodiff tape.

mod incremental;
mod params;

pub use incremental::IncrementalDecoder;
pub use params::ParamStore;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, TokenMatrix};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

const LN_EPS: f32 = 1e-5;
const MASK_FILL: f32 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub dropout: f32,
    pub max_len: usize,
    /// Reuse the target embedding table as the output projection.
    pub share_embeddings: bool,
}

impl ModelConfig {
    /// Desk-scale default: 64 wide, 4 heads, 2+2 layers.
    pub fn desk(vocab_src: usize, vocab_tgt: usize) -> Self {
        ModelConfig {
            vocab_src,
            vocab_tgt,
            d_model: 64,
            n_heads: 4,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ff: 256,
            dropout: 0.1,
            max_len: 256,
            share_embeddings: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_src", self.vocab_src),
            ("vocab_tgt", self.vocab_tgt),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::OutOfRange { name: "dropout", value: self.dropout as f64, range: "[0, 1)" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln_attn: Norm,
    attn: Attention,
    ln_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln_self: Norm,
    self_attn: Attention,
    ln_cross: Norm,
    cross_attn: Attention,
    ln_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    /// `None` when the output projection is the target embedding.
    out_w: Option<usize>,
    out_b: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in ±1/sqrt(fan_in).
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

/// Canonical parameter list: name, shape, initializer.
fn parameter_plan(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let mut plan = Vec::new();
    let linear = |plan: &mut Vec<_>, name: String, fan_in: usize, fan_out: usize| {
        plan.push((format!("{name}.w"), vec![fan_in, fan_out], Init::Uniform { fan_in }));
        plan.push((format!("{name}.b"), vec![fan_out], Init::Zeros));
    };
    let norm = |plan: &mut Vec<_>, name: String| {
        plan.push((format!("{name}.g"), vec![d], Init::Ones));
        plan.push((format!("{name}.b"), vec![d], Init::Zeros));
    };
    plan.push(("src_embed".into(), vec![c.vocab_src, d], Init::Uniform { fan_in: d }));
    plan.push(("tgt_embed".into(), vec![c.vocab_tgt, d], Init::Uniform { fan_in: d }));
    for l in 0..c.n_layers_enc {
        let p = format!("enc.{l}");
        norm(&mut plan, format!("{p}.ln_attn"));
        for m in ["q", "k", "v", "o"] {
            linear(&mut plan, format!("{p}.attn.{m}"), d, d);
        }
        norm(&mut plan, format!("{p}.ln_ff"));
        linear(&mut plan, format!("{p}.ff.up"), d, c.d_ff);
        linear(&mut plan, format!("{p}.ff.down"), c.d_ff, d);
    }
    norm(&mut plan, "enc.norm".into());
    for l in 0..c.n_layers_dec {
        let p = format!("dec.{l}");
        norm(&mut plan, format!("{p}.ln_self"));
        for m in ["q", "k", "v", "o"] {
            linear(&mut plan, format!("{p}.self.{m}"), d, d);
        }
        norm(&mut plan, format!("{p}.ln_cross"));
        for m in ["q", "k", "v", "o"] {
            linear(&mut plan, format!("{p}.cross.{m}"), d, d);
        }
        norm(&mut plan, format!("{p}.ln_ff"));
        linear(&mut plan, format!("{p}.ff.up"), d, c.d_ff);
        linear(&mut plan, format!("{p}.ff.down"), c.d_ff, d);
    }
    norm(&mut plan, "dec.norm".into());
    if c.share_embeddings {
        plan.push(("out.b".into(), vec![c.vocab_tgt], Init::Zeros));
    } else {
        linear(&mut plan, "out".into(), d, c.vocab_tgt);
    }
    plan
}

fn resolve_layout(c: &ModelConfig, store: &ParamStore) -> Result<Layout> {
    let idx = |name: String| store.index_of(&name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")));
    let linear = |name: String| -> Result<Linear> { Ok(Linear { w: idx(format!("{name}.w"))?, b: idx(format!("{name}.b"))? }) };
    let norm = |name: String| -> Result<Norm> { Ok(Norm { g: idx(format!("{name}.g"))?, b: idx(format!("{name}.b"))? }) };
    let attention = |p: String| -> Result<Attention> {
        Ok(Attention {
            q: linear(format!("{p}.q"))?,
            k: linear(format!("{p}.k"))?,
            v: linear(format!("{p}.v"))?,
            o: linear(format!("{p}.o"))?,
        })
    };
    let ff = |p: String| -> Result<FeedForward> {
        Ok(FeedForward { up: linear(format!("{p}.up"))?, down: linear(format!("{p}.down"))? })
    };
    let encoder = (0..c.n_layers_enc)
        .map(|l| {
            Ok(EncoderLayer {
                ln_attn: norm(format!("enc.{l}.ln_attn"))?,
                attn: attention(format!("enc.{l}.attn"))?,
                ln_ff: norm(format!("enc.{l}.ln_ff"))?,
                ff: ff(format!("enc.{l}.ff"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decoder = (0..c.n_layers_dec)
        .map(|l| {
            Ok(DecoderLayer {
                ln_self: norm(format!("dec.{l}.ln_self"))?,
                self_attn: attention(format!("dec.{l}.self"))?,
                ln_cross: norm(format!("dec.{l}.ln_cross"))?,
                cross_attn: attention(format!("dec.{l}.cross"))?,
                ln_ff: norm(format!("dec.{l}.ln_ff"))?,
                ff: ff(format!("dec.{l}.ff"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Layout {
        src_embed: idx("src_embed".into())?,
        tgt_embed: idx("tgt_embed".into())?,
        encoder,
        enc_norm: norm("enc.norm".into())?,
        decoder,
        dec_norm: norm("dec.norm".into())?,
        out_w: if c.share_embeddings { None } else { Some(idx("out.w".into())?) },
        out_b: idx("out.b".into())?,
    })
}

fn sinusoidal_table(max_len: usize, d: usize) -> Vec<f32> {
    let mut pe = vec![0.0f32; max_len * d];
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let freq = (-(2.0 * i as f64) * (10000f64).ln() / d as f64).exp();
            let angle = pos as f64 * freq;
            pe[pos * d + 2 * i] = angle.sin() as f32;
            pe[pos * d + 2 * i + 1] = angle.cos() as f32;
        }
    }
    pe
}

/// Encoder-decoder model: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
    positions: Vec<f32>,
}

impl Transformer {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in parameter_plan(&config) {
            let t = match init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
                }
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::from_fn(&shape, |_| 1.0),
            };
            store.insert(name, t)?;
        }
        Self::from_params(config, store)
    }

    /// Wraps an existing parameter set, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let plan = parameter_plan(&config);
        if plan.len() != params.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", plan.len(), params.len())));
        }
        for (name, shape, _) in &plan {
            let t = params.get(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("parameter {name}: expected {shape:?}, found {:?}", t.shape())));
            }
        }
        let layout = resolve_layout(&config, &params)?;
        let positions = sinusoidal_table(config.max_len, config.d_model);
        Ok(Transformer { config, params, layout, positions })
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.bind(g)
    }

    fn check_tokens(tokens: &TokenMatrix, vocab: usize, max_len: usize) -> Result<()> {
        if tokens.cols > max_len {
            return Err(Error::TooLong { len: tokens.cols, max_len });
        }
        if let Some(position) = tokens.data.iter().position(|&t| t >= vocab) {
            return Err(Error::TokenOutOfRange { id: tokens.data[position], position, vocab });
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph, table: Var, tokens: &TokenMatrix, offset: usize, rng: &mut ChaCha8Rng) -> Var {
        let d = self.config.d_model;
        let (b, t) = (tokens.rows, tokens.cols);
        let e = g.embedding(table, &tokens.data);
        let e = g.scale(e, (d as f32).sqrt());
        let mut pe = Vec::with_capacity(b * t * d);
        for _ in 0..b {
            pe.extend_from_slice(&self.positions[offset * d..(offset + t) * d]);
        }
        let pe = g.constant(&[b * t, d], pe);
        let x = g.add(e, pe);
        let x = g.reshape(x, &[b, t, d]);
        g.dropout(x, self.config.dropout, rng)
    }

    fn linear(&self, g: &mut Graph, p: &[Var], lin: &Linear, x: Var) -> Var {
        let y = g.matmul(x, p[lin.w], false);
        g.add_bias(y, p[lin.b])
    }

    fn norm(&self, g: &mut Graph, p: &[Var], n: &Norm, x: Var) -> Var {
        g.layer_norm(x, p[n.g], p[n.b], LN_EPS)
    }

    /// `[B, T, d]` to `[B, H, T, dh]`.
    fn split_heads(&self, g: &mut Graph, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let (h, dh) = (self.config.n_heads, self.config.head_dim());
        let x = g.reshape(x, &[s[0], s[1], h, dh]);
        g.permute(x, &[0, 2, 1, 3])
    }

    /// Scaled dot-product attention over pre-split heads; returns `[B, Tq, d]`.
    fn attend(&self, g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&[bool]>, rng: &mut ChaCha8Rng) -> Var {
        let scores = g.matmul(q, k, true);
        let scores = g.scale(scores, 1.0 / (self.config.head_dim() as f32).sqrt());
        let scores = match mask {
            Some(m) => g.masked_fill(scores, m, MASK_FILL),
            None => scores,
        };
        let att = g.softmax(scores);
        let att = g.dropout(att, self.config.dropout, rng);
        let ctx = g.matmul(att, v, false);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let s = g.shape(ctx).to_vec();
        g.reshape(ctx, &[s[0], s[1], self.config.d_model])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(&self, g: &mut Graph, p: &[Var], a: &Attention, xq: Var, xkv: Var, mask: &[bool], rng: &mut ChaCha8Rng) -> Var {
        let q = self.linear(g, p, &a.q, xq);
        let k = self.linear(g, p, &a.k, xkv);
        let v = self.linear(g, p, &a.v, xkv);
        let (q, k, v) = (self.split_heads(g, q), self.split_heads(g, k), self.split_heads(g, v));
        let ctx = self.attend(g, q, k, v, Some(mask), rng);
        self.linear(g, p, &a.o, ctx)
    }

    fn feed_forward(&self, g: &mut Graph, p: &[Var], ff: &FeedForward, x: Var, rng: &mut ChaCha8Rng) -> Var {
        let h = self.linear(g, p, &ff.up, x);
        let h = g.relu(h);
        let h = g.dropout(h, self.config.dropout, rng);
        self.linear(g, p, &ff.down, h)
    }

    fn residual(&self, g: &mut Graph, x: Var, branch: Var, rng: &mut ChaCha8Rng) -> Var {
        let branch = g.dropout(branch, self.config.dropout, rng);
        g.add(x, branch)
    }

    /// Key-padding mask broadcast to `[B, H, Tq, Tk]`.
    fn padding_mask(&self, pad: &[bool], rows: usize, tq: usize) -> Vec<bool> {
        let tk = pad.len() / rows.max(1);
        let mut m = Vec::with_capacity(rows * self.config.n_heads * tq * tk);
        for b in 0..rows {
            let row = &pad[b * tk..(b + 1) * tk];
            for _ in 0..self.config.n_heads * tq {
                m.extend_from_slice(row);
            }
        }
        m
    }

    fn causal_mask(&self, rows: usize, t: usize) -> Vec<bool> {
        let mut m = Vec::with_capacity(rows * self.config.n_heads * t * t);
        for _ in 0..rows * self.config.n_heads {
            for i in 0..t {
                m.extend((0..t).map(|j| j > i));
            }
        }
        m
    }

    /// Encoder output `[B, S, d]`. Padding keys are excluded from attention.
    pub fn encode(&self, g: &mut Graph, p: &[Var], src: &TokenMatrix, rng: &mut ChaCha8Rng) -> Result<Var> {
        Self::check_tokens(src, self.config.vocab_src, self.config.max_len)?;
        let pad = src.pad_mask();
        let mask = self.padding_mask(&pad, src.rows, src.cols);
        let mut x = self.embed(g, p[self.layout.src_embed], src, 0, rng);
        for layer in &self.layout.encoder {
            let h = self.norm(g, p, &layer.ln_attn, x);
            let a = self.attention(g, p, &layer.attn, h, h, &mask, rng);
            x = self.residual(g, x, a, rng);
            let h = self.norm(g, p, &layer.ln_ff, x);
            let f = self.feed_forward(g, p, &layer.ff, h, rng);
            x = self.residual(g, x, f, rng);
        }
        Ok(self.norm(g, p, &self.layout.enc_norm, x))
    }

    /// Decoder logits `[B, T, V]` for a full input sequence (gold, mixed or a
    /// prefix). Position `t` sees decoder inputs `0..=t` only.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_logits(
        &self,
        g: &mut Graph,
        p: &[Var],
        memory: Var,
        src_pad: &[bool],
        tgt_in: &TokenMatrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        Self::check_tokens(tgt_in, self.config.vocab_tgt, self.config.max_len)?;
        let (b, t) = (tgt_in.rows, tgt_in.cols);
        if g.shape(memory)[0] != b {
            return Err(Error::Shape(format!("memory batch {} vs decoder batch {b}", g.shape(memory)[0])));
        }
        let self_mask = self.causal_mask(b, t);
        let cross_mask = self.padding_mask(src_pad, b, t);
        let mut x = self.embed(g, p[self.layout.tgt_embed], tgt_in, 0, rng);
        for layer in &self.layout.decoder {
            let h = self.norm(g, p, &layer.ln_self, x);
            let a = self.attention(g, p, &layer.self_attn, h, h, &self_mask, rng);
            x = self.residual(g, x, a, rng);
            let h = self.norm(g, p, &layer.ln_cross, x);
            let a = self.attention(g, p, &layer.cross_attn, h, memory, &cross_mask, rng);
            x = self.residual(g, x, a, rng);
            let h = self.norm(g, p, &layer.ln_ff, x);
            let f = self.feed_forward(g, p, &layer.ff, h, rng);
            x = self.residual(g, x, f, rng);
        }
        let x = self.norm(g, p, &self.layout.dec_norm, x);
        Ok(self.project(g, p, x))
    }

    fn project(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let logits = match self.layout.out_w {
            Some(w) => g.matmul(x, p[w], false),
            None => g.matmul(x, p[self.layout.tgt_embed], true),
        };
        g.add_bias(logits, p[self.layout.out_b])
    }

    /// Log-probabilities `[B, T, V]` of the next target token for every
    /// decoder input position.
    pub fn log_probs(
        &self,
        g: &mut Graph,
        p: &[Var],
        src: &TokenMatrix,
        tgt_in: &TokenMatrix,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let memory = self.encode(g, p, src, rng)?;
        let logits = self.decode_logits(g, p, memory, &src.pad_mask(), tgt_in, rng)?;
        g.log_softmax(logits, 2)
    }

    /// Teacher-forced log-probabilities for a batch.
    pub fn batch_log_probs(&self, g: &mut Graph, p: &[Var], batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Var> {
        self.log_probs(g, p, &batch.src, &batch.tgt_in, rng)
    }

    /// Gradient-free teacher-forced log-probabilities `[B, T, V]`, in
    /// evaluation mode.
    pub fn score(&self, src: &TokenMatrix, tgt_in: &TokenMatrix) -> Result<Tensor> {
        let mut g = Graph::no_grad();
        let p = self.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lp = self.log_probs(&mut g, &p, src, tgt_in, &mut rng)?;
        Ok(g.tensor(lp))
    }

    pub(crate) fn positions(&self) -> &[f32] {
        &self.positions
    }
}
