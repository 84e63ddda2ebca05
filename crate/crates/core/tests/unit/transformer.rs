use mixce::data::TokenMatrix;
use mixce::tensor::{Graph, Tensor};
use mixce::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixce::data::{BOS, EOS};
use mixce::transformer::*;

pub(crate) fn tiny_config(vocab_src: usize, vocab_tgt: usize) -> ModelConfig {
    ModelConfig {
        vocab_src,
        vocab_tgt,
        d_model: 16,
        n_heads: 2,
        n_layers_enc: 2,
        n_layers_dec: 2,
        d_ff: 32,
        dropout: 0.0,
        max_len: 32,
        share_embeddings: false,
    }
}

fn memory_of(model: &Transformer, src: &TokenMatrix) -> Tensor {
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    let m = model.encode(&mut g, &p, src, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    g.tensor(m)
}

#[test]
fn desk_defaults() {
    let c = ModelConfig::desk(10, 12);
    assert_eq!((c.d_model, c.n_heads, c.n_layers_enc, c.n_layers_dec, c.d_ff), (64, 4, 2, 2, 256));
    assert!((c.dropout - 0.1).abs() < 1e-7);
    assert!(!c.share_embeddings);
    assert!(Transformer::new(c, 0).is_ok());
}

#[test]
fn rejects_indivisible_heads() {
    let mut c = tiny_config(8, 8);
    c.n_heads = 3;
    assert!(Transformer::new(c, 0).is_err());
}

#[test]
fn memory_shape_and_padding_exclusion() {
    let model = Transformer::new(tiny_config(10, 10), 1).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5, 6], vec![4, 5, 6, 7, 8]]);
    let mem = memory_of(&model, &src);
    assert_eq!(mem.shape(), &[2, 5, 16]);
    let alone = memory_of(&model, &TokenMatrix::from_rows(&[vec![4, 5, 6]]));
    for i in 0..3 * 16 {
        assert!((mem.data()[i] - alone.data()[i]).abs() < 1e-5);
    }
}

#[test]
fn duplicated_sentence_gives_identical_rows() {
    let model = Transformer::new(tiny_config(10, 10), 2).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 9, 7, 2], vec![4, 9, 7, 2]]);
    let mem = memory_of(&model, &src);
    let n = 4 * 16;
    assert_eq!(&mem.data()[..n], &mem.data()[n..]);
}

#[test]
fn permuting_batch_permutes_memory() {
    let model = Transformer::new(tiny_config(12, 10), 3).unwrap();
    let rows = vec![vec![4, 5, 2], vec![6, 7, 8], vec![9, 11, 10]];
    let perm = [2, 0, 1];
    let a = memory_of(&model, &TokenMatrix::from_rows(&rows));
    let permuted: Vec<Vec<usize>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let b = memory_of(&model, &TokenMatrix::from_rows(&permuted));
    let n = 3 * 16;
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(&b.data()[new * n..(new + 1) * n], &a.data()[old * n..(old + 1) * n]);
    }
}

#[test]
fn out_of_vocab_source_is_rejected_with_index() {
    let model = Transformer::new(tiny_config(10, 10), 0).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5], vec![6, 12]]);
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    match model.encode(&mut g, &p, &src, &mut ChaCha8Rng::seed_from_u64(0)) {
        Err(Error::TokenOutOfRange { id: 12, position: 3, vocab: 10 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn over_long_decoder_input_is_rejected() {
    let model = Transformer::new(tiny_config(10, 10), 0).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5]]);
    let tgt = TokenMatrix::from_rows(&[vec![BOS; 40]]);
    assert!(matches!(model.score(&src, &tgt), Err(Error::TooLong { len: 40, max_len: 32 })));
}

#[test]
fn causality_is_bit_exact() {
    let model = Transformer::new(tiny_config(10, 10), 4).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5, 6, EOS]]);
    let base = vec![BOS, 4, 5, 6, 7, 8];
    let a = model.score(&src, &TokenMatrix::from_rows(&[base.clone()])).unwrap();
    for t in 1..base.len() {
        let mut changed = base.clone();
        changed[t] = 9;
        let b = model.score(&src, &TokenMatrix::from_rows(&[changed])).unwrap();
        let v = 10;
        assert_eq!(&a.data()[..t * v], &b.data()[..t * v], "perturbing position {t}");
        assert_ne!(&a.data()[t * v..], &b.data()[t * v..]);
    }
}

#[test]
fn single_token_prefix_shape() {
    let model = Transformer::new(tiny_config(10, 11), 0).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5], vec![6, 7]]);
    let lp = model.score(&src, &TokenMatrix::from_rows(&[vec![BOS], vec![BOS]])).unwrap();
    assert_eq!(lp.shape(), &[2, 1, 11]);
}

#[test]
fn incremental_matches_parallel() {
    for share in [false, true] {
        let mut c = tiny_config(10, 10);
        c.share_embeddings = share;
        let model = Transformer::new(c, 5).unwrap();
        let src = TokenMatrix::from_rows(&[vec![4, 5, 6, EOS], vec![7, 8, EOS]]);
        let inputs = [vec![BOS, 4, 9, 5, 6], vec![BOS, 8, 8, 7, 4]];
        let full = model.score(&src, &TokenMatrix::from_rows(&inputs)).unwrap();
        let mut dec = IncrementalDecoder::new(&model, &src).unwrap();
        for t in 0..5 {
            let step = dec.step(&[inputs[0][t], inputs[1][t]]).unwrap();
            for r in 0..2 {
                for k in 0..10 {
                    let f = full.data()[(r * 5 + t) * 10 + k];
                    let s = step[r * 10 + k];
                    assert!((f - s).abs() < 1e-4, "share={share} row {r} t {t}: {f} vs {s}");
                }
            }
        }
    }
}

#[test]
fn select_reorders_cached_rows() {
    let model = Transformer::new(tiny_config(10, 10), 6).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5, EOS], vec![7, 8, 9, EOS]]);
    let mut dec = IncrementalDecoder::new(&model, &src).unwrap();
    dec.step(&[BOS, BOS]).unwrap();
    let a = dec.step(&[4, 6]).unwrap();
    let mut swapped = IncrementalDecoder::new(&model, &src).unwrap();
    swapped.step(&[BOS, BOS]).unwrap();
    swapped.select(&[1, 0, 1]);
    let b = swapped.step(&[6, 4, 6]).unwrap();
    assert_eq!(&b[..10], &a[10..]);
    assert_eq!(&b[10..20], &a[..10]);
    assert_eq!(&b[20..], &a[10..]);
}

#[test]
fn from_params_checks_shapes() {
    let model = Transformer::new(tiny_config(10, 10), 0).unwrap();
    let other = tiny_config(10, 11);
    assert!(Transformer::from_params(other, model.params.clone()).is_err());
    let again = Transformer::from_params(model.config.clone(), model.params.clone()).unwrap();
    assert_eq!(again.params.to_bytes(), model.params.to_bytes());
}

#[test]
fn dropout_free_forward_is_pure() {
    let model = Transformer::new(tiny_config(10, 10), 7).unwrap();
    let src = TokenMatrix::from_rows(&[vec![4, 5, EOS]]);
    let tgt = TokenMatrix::from_rows(&[vec![BOS, 6, 7]]);
    assert_eq!(model.score(&src, &tgt).unwrap(), model.score(&src, &tgt).unwrap());
}
