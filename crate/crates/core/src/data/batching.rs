use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncodedPair, BOS, EOS, PAD};
use crate::{Error, Result};

/// Row-major matrix of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<usize>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!("{rows}x{cols} token matrix with {} ids", data.len())));
        }
        Ok(TokenMatrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, id: usize) -> Self {
        TokenMatrix { rows, cols, data: vec![id; rows * cols] }
    }

    /// Pads ragged rows on the right with [`PAD`].
    pub fn from_rows(rows: &[Vec<usize>]) -> Self {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut m = Self::filled(rows.len(), cols, PAD);
        for (r, row) in rows.iter().enumerate() {
            m.row_mut(r)[..row.len()].copy_from_slice(row);
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, id: usize) {
        self.data[r * self.cols + c] = id;
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [usize] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &TokenMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Truth where the entry is padding.
    pub fn pad_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&t| t == PAD).collect()
    }
}

/// Padded training batch.
///
/// The source side ends with an end marker. The decoder input starts with
/// the start marker and `tgt_out` is the same sequence shifted left by one
/// and terminated by the end marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: TokenMatrix,
    pub src_pad: Vec<bool>,
    pub tgt_in: TokenMatrix,
    pub tgt_out: TokenMatrix,
    pub tgt_pad: Vec<bool>,
    /// Self-distillation targets aligned with `tgt_out`.
    pub distilled: Option<TokenMatrix>,
    /// Corpus index of each row.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair], indices: Vec<usize>) -> Self {
        let src_rows: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.iter().copied().chain([EOS]).collect()).collect();
        let in_rows: Vec<Vec<usize>> = pairs.iter().map(|p| [BOS].into_iter().chain(p.tgt.iter().copied()).collect()).collect();
        let out_rows: Vec<Vec<usize>> = pairs.iter().map(|p| p.tgt.iter().copied().chain([EOS]).collect()).collect();
        let src = TokenMatrix::from_rows(&src_rows);
        let tgt_in = TokenMatrix::from_rows(&in_rows);
        let tgt_out = TokenMatrix::from_rows(&out_rows);
        let distilled = if pairs.iter().all(|p| p.distilled.is_some()) && !pairs.is_empty() {
            let rows: Vec<Vec<usize>> =
                pairs.iter().map(|p| p.distilled.as_ref().unwrap().iter().copied().chain([EOS]).collect()).collect();
            let m = TokenMatrix::from_rows(&rows);
            debug_assert!(m.same_shape(&tgt_out), "distilled targets must match gold lengths");
            Some(m)
        } else {
            None
        };
        Batch { src_pad: src.pad_mask(), tgt_pad: tgt_out.pad_mask(), src, tgt_in, tgt_out, distilled, indices }
    }

    pub fn size(&self) -> usize {
        self.src.rows
    }

    /// Non-padding target positions.
    pub fn target_tokens(&self) -> usize {
        self.tgt_pad.iter().filter(|&&p| !p).count()
    }
}

/// Groups pairs of similar length so that `rows × longest` stays within
/// `max_tokens` for every batch. The seed shuffles pairs before the stable
/// length sort (so equal-length pairs land in different batches) and then
/// shuffles batch order.
pub fn make_batches(pairs: &[EncodedPair], max_tokens: usize, seed: u64) -> Result<Vec<Batch>> {
    if let Some((index, p)) = pairs.iter().enumerate().find(|(_, p)| p.len() > max_tokens) {
        return Err(Error::SentenceTooLong { index, len: p.len(), max_tokens });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| pairs[i].len());

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let len = pairs[i].len().max(1);
        let widened = longest.max(len);
        if !current.is_empty() && (current.len() + 1) * widened > max_tokens {
            groups.push(std::mem::take(&mut current));
            longest = 0;
        }
        longest = longest.max(len);
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups.shuffle(&mut rng);
    Ok(groups
        .into_iter()
        .map(|g| {
            let refs: Vec<&EncodedPair> = g.iter().map(|&i| &pairs[i]).collect();
            Batch::from_pairs(&refs, g)
        })
        .collect())
}
