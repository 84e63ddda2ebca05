//! Dense row-major matrix product used by the autodiff tape.

use crate::par;

/// Products smaller than this many multiply-adds stay on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 15;

/// Target multiply-adds per parallel task.
const TASK_WORK: usize = 1 << 14;

/// Layout of the two operands of [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gemm {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `a` is stored as `k × m` instead of `m × k`.
    pub trans_a: bool,
    /// `b` is stored as `n × k` instead of `k × n`.
    pub trans_b: bool,
    /// Add into `c` instead of overwriting it.
    pub accumulate: bool,
}

impl Gemm {
    pub fn new(m: usize, k: usize, n: usize) -> Self {
        Gemm { m, k, n, trans_a: false, trans_b: false, accumulate: false }
    }

    pub fn trans_a(mut self, yes: bool) -> Self {
        self.trans_a = yes;
        self
    }

    pub fn trans_b(mut self, yes: bool) -> Self {
        self.trans_b = yes;
        self
    }

    pub fn accumulate(mut self, yes: bool) -> Self {
        self.accumulate = yes;
        self
    }

    fn check(&self, a: &[f32], b: &[f32], c: &[f32]) {
        assert_eq!(a.len(), self.m * self.k, "gemm: lhs length");
        assert_eq!(b.len(), self.k * self.n, "gemm: rhs length");
        assert_eq!(c.len(), self.m * self.n, "gemm: output length");
    }
}

/// `c = op(a) · op(b)`, splitting output rows across threads for large
/// products when the `parallel` feature is on.
pub fn gemm(spec: Gemm, a: &[f32], b: &[f32], c: &mut [f32]) {
    spec.check(a, b, c);
    if spec.n == 0 || spec.m == 0 {
        return;
    }
    // Row-times-matrix updates vectorize along the output row, which beats
    // short dot products once the transpose is paid off over enough rows.
    let transposed;
    let (spec, b) = if spec.trans_b && spec.m >= 4 && spec.n >= 8 {
        transposed = transpose(b, spec.n, spec.k);
        (spec.trans_b(false), transposed.as_slice())
    } else {
        (spec, b)
    };
    if par::ENABLED && spec.m > 1 && spec.m * spec.k * spec.n >= PARALLEL_THRESHOLD {
        gemm_parallel(spec, a, b, c);
    } else {
        gemm_sequential(spec, a, b, c);
    }
}

/// `rows × cols` row-major into `cols × rows`.
fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks_exact(cols).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

/// Single-threaded reference path.
pub fn gemm_sequential(spec: Gemm, a: &[f32], b: &[f32], c: &mut [f32]) {
    spec.check(a, b, c);
    if spec.n == 0 {
        return;
    }
    for (i, row) in c.chunks_mut(spec.n).enumerate() {
        gemm_row(&spec, i, a, b, row);
    }
}

/// Row-parallel path; falls back to sequential iteration without the
/// `parallel` feature.
pub fn gemm_parallel(spec: Gemm, a: &[f32], b: &[f32], c: &mut [f32]) {
    spec.check(a, b, c);
    if spec.n == 0 {
        return;
    }
    // Enough rows per task that scheduling stays cheap next to the work.
    let rows = (TASK_WORK / (spec.k * spec.n).max(1)).clamp(1, spec.m);
    par::for_each_chunk_mut(c, rows * spec.n, |t, chunk| {
        for (r, row) in chunk.chunks_mut(spec.n).enumerate() {
            gemm_row(&spec, t * rows + r, a, b, row);
        }
    });
}

/// Dispatches to a copy of the row kernel compiled for AVX2 and FMA when the
/// CPU has them. Every path of one process uses the same choice, so
/// parallel and sequential results stay bit-identical.
fn gemm_row(spec: &Gemm, i: usize, a: &[f32], b: &[f32], row: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { gemm_row_avx2(spec, i, a, b, row) };
            return;
        }
    }
    gemm_row_generic(spec, i, a, b, row);
}

#[cfg(target_arch = "x86_64")]
fn has_avx2_fma() -> bool {
    use std::sync::OnceLock;
    static DETECTED: OnceLock<bool> = OnceLock::new();
    *DETECTED.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_row_avx2(spec: &Gemm, i: usize, a: &[f32], b: &[f32], row: &mut [f32]) {
    gemm_row_generic(spec, i, a, b, row);
}

#[inline(always)]
fn gemm_row_generic(spec: &Gemm, i: usize, a: &[f32], b: &[f32], row: &mut [f32]) {
    let Gemm { m, k, n, trans_a, trans_b, accumulate } = *spec;
    if !accumulate {
        row.fill(0.0);
    }
    match (trans_a, trans_b) {
        (false, false) => {
            let arow = &a[i * k..(i + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
        (false, true) => {
            let arow = &a[i * k..(i + 1) * k];
            for (j, out) in row.iter_mut().enumerate() {
                *out += dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
        (true, false) => {
            for p in 0..k {
                axpy(a[p * m + i], &b[p * n..(p + 1) * n], row);
            }
        }
        (true, true) => {
            for (j, out) in row.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a[p * m + i] * brow[p];
                }
                *out += acc;
            }
        }
    }
}

#[inline(always)]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline(always)]
fn dot(x: &[f32], y: &[f32]) -> f32 {
    // Independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f32; 8];
    let (xs, ys) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: f32 = xs.remainder().iter().zip(ys.remainder()).map(|(a, b)| a * b).sum();
    for (xc, yc) in xs.zip(ys) {
        for l in 0..8 {
            acc[l] += xc[l] * yc[l];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}
