use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Attention, Transformer};
use crate::data::TokenMatrix;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Step-by-step decoder with cached self-attention keys/values.
///
/// Rows are independent hypotheses. [`IncrementalDecoder::select`] reorders
/// or duplicates rows, which is how beam search and sampling fan a single
/// source out into many continuations.
pub struct IncrementalDecoder<'m> {
    model: &'m Transformer,
    graph: Graph,
    params: Vec<Var>,
    rows: usize,
    steps: usize,
    src_len: usize,
    src_pad: Vec<bool>,
    /// Per layer, `[rows, H, S, dh]`.
    cross_k: Vec<Vec<f32>>,
    cross_v: Vec<Vec<f32>>,
    /// Per layer, `[rows, H, steps, dh]`.
    self_k: Vec<Vec<f32>>,
    self_v: Vec<Vec<f32>>,
}

impl<'m> IncrementalDecoder<'m> {
    /// Encodes `src` (evaluation mode) and prepares an empty cache.
    pub fn new(model: &'m Transformer, src: &TokenMatrix) -> Result<Self> {
        let mut graph = Graph::no_grad();
        let params = model.bind(&mut graph);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let memory = model.encode(&mut graph, &params, src, &mut rng)?;
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        for layer in &model.layout.decoder {
            let a = &layer.cross_attn;
            let k = model.linear(&mut graph, &params, &a.k, memory);
            let k = model.split_heads(&mut graph, k);
            let v = model.linear(&mut graph, &params, &a.v, memory);
            let v = model.split_heads(&mut graph, v);
            cross_k.push(graph.value(k).to_vec());
            cross_v.push(graph.value(v).to_vec());
        }
        let layers = model.layout.decoder.len();
        Ok(IncrementalDecoder {
            model,
            graph,
            params,
            rows: src.rows,
            steps: 0,
            src_len: src.cols,
            src_pad: src.pad_mask(),
            cross_k,
            cross_v,
            self_k: vec![Vec::new(); layers],
            self_v: vec![Vec::new(); layers],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of tokens consumed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Feeds one token per row and returns next-token log-probabilities,
    /// `rows × vocab` row-major.
    pub fn step(&mut self, tokens: &[usize]) -> Result<Vec<f32>> {
        let m = self.model;
        let c = &m.config;
        if tokens.len() != self.rows {
            return Err(Error::Shape(format!("{} tokens for {} rows", tokens.len(), self.rows)));
        }
        if self.steps >= c.max_len {
            return Err(Error::TooLong { len: self.steps + 1, max_len: c.max_len });
        }
        if let Some(position) = tokens.iter().position(|&t| t >= c.vocab_tgt) {
            return Err(Error::TokenOutOfRange { id: tokens[position], position, vocab: c.vocab_tgt });
        }
        let (d, h, dh, rows, t) = (c.d_model, c.n_heads, c.head_dim(), self.rows, self.steps);
        let g = &mut self.graph;
        let p = &self.params;
        // Dropout never fires: the graph stays in evaluation mode.
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let e = g.embedding(p[m.layout.tgt_embed], tokens);
        let e = g.scale(e, (d as f32).sqrt());
        let pe_row = &m.positions()[t * d..(t + 1) * d];
        let pe = g.constant(&[rows, d], pe_row.repeat(rows));
        let x = g.add(e, pe);
        let mut x = g.reshape(x, &[rows, 1, d]);

        let cross_mask = m.padding_mask(&self.src_pad, rows, 1);
        for (l, layer) in m.layout.decoder.iter().enumerate() {
            let hn = m.norm(g, p, &layer.ln_self, x);
            let ctx = {
                let a: &Attention = &layer.self_attn;
                let q = m.linear(g, p, &a.q, hn);
                let q = m.split_heads(g, q);
                let k = m.linear(g, p, &a.k, hn);
                let v = m.linear(g, p, &a.v, hn);
                self.self_k[l] = append_step(&self.self_k[l], g.value(k), rows, h, t, dh);
                self.self_v[l] = append_step(&self.self_v[l], g.value(v), rows, h, t, dh);
                let kc = g.constant(&[rows, h, t + 1, dh], self.self_k[l].clone());
                let vc = g.constant(&[rows, h, t + 1, dh], self.self_v[l].clone());
                let ctx = m.attend(g, q, kc, vc, None, &mut rng);
                m.linear(g, p, &a.o, ctx)
            };
            x = g.add(x, ctx);

            let hn = m.norm(g, p, &layer.ln_cross, x);
            let ctx = {
                let a = &layer.cross_attn;
                let q = m.linear(g, p, &a.q, hn);
                let q = m.split_heads(g, q);
                let s = self.src_len;
                let kc = g.constant(&[rows, h, s, dh], self.cross_k[l].clone());
                let vc = g.constant(&[rows, h, s, dh], self.cross_v[l].clone());
                let ctx = m.attend(g, q, kc, vc, Some(&cross_mask), &mut rng);
                m.linear(g, p, &a.o, ctx)
            };
            x = g.add(x, ctx);

            let hn = m.norm(g, p, &layer.ln_ff, x);
            let f = m.feed_forward(g, p, &layer.ff, hn, &mut rng);
            x = g.add(x, f);
        }
        let x = m.norm(g, p, &m.layout.dec_norm, x);
        let logits = m.project(g, p, x);
        let lp = g.log_softmax(logits, 2)?;
        self.steps += 1;
        Ok(g.value(lp).to_vec())
    }

    /// Keeps rows `order[i]` as the new row `i` (rows may repeat).
    pub fn select(&mut self, order: &[usize]) {
        let c = &self.model.config;
        let (h, dh) = (c.n_heads, c.head_dim());
        let gather = |buf: &[f32], width: usize| -> Vec<f32> {
            let mut out = Vec::with_capacity(order.len() * width);
            for &r in order {
                out.extend_from_slice(&buf[r * width..(r + 1) * width]);
            }
            out
        };
        let cross_w = h * self.src_len * dh;
        let self_w = h * self.steps * dh;
        for l in 0..self.cross_k.len() {
            self.cross_k[l] = gather(&self.cross_k[l], cross_w);
            self.cross_v[l] = gather(&self.cross_v[l], cross_w);
            self.self_k[l] = gather(&self.self_k[l], self_w);
            self.self_v[l] = gather(&self.self_v[l], self_w);
        }
        let mut pad = Vec::with_capacity(order.len() * self.src_len);
        for &r in order {
            pad.extend_from_slice(&self.src_pad[r * self.src_len..(r + 1) * self.src_len]);
        }
        self.src_pad = pad;
        self.rows = order.len();
    }
}

/// Appends one step of `[rows, 1, H*dh]` projections to a `[rows, H, t, dh]`
/// cache.
fn append_step(cache: &[f32], new: &[f32], rows: usize, h: usize, t: usize, dh: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * h * (t + 1) * dh);
    for r in 0..rows {
        for head in 0..h {
            let old = (r * h + head) * t * dh;
            out.extend_from_slice(&cache[old..old + t * dh]);
            let at = r * h * dh + head * dh;
            out.extend_from_slice(&new[at..at + dh]);
        }
    }
    out
}
