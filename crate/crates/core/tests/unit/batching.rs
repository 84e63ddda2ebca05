use mixce::data::{EncodedPair, BOS, EOS, PAD};
use mixce::Error;
use proptest::prelude::*;

use mixce::data::*;

fn pair(len: usize, tag: usize) -> EncodedPair {
    EncodedPair { src: vec![10 + tag; len], tgt: vec![20 + tag; len], distilled: None }
}

#[test]
fn batch_layout() {
    let a = EncodedPair { src: vec![5, 6], tgt: vec![7], distilled: None };
    let b = EncodedPair { src: vec![5], tgt: vec![8, 9], distilled: None };
    let batch = Batch::from_pairs(&[&a, &b], vec![0, 1]);
    assert_eq!(batch.src.data, vec![5, 6, EOS, 5, EOS, PAD]);
    assert_eq!(batch.tgt_in.data, vec![BOS, 7, PAD, BOS, 8, 9]);
    assert_eq!(batch.tgt_out.data, vec![7, EOS, PAD, 8, 9, EOS]);
    assert_eq!(batch.tgt_pad, vec![false, false, true, false, false, false]);
    assert_eq!(batch.target_tokens(), 5);
}

#[test]
fn short_sentences_share_a_batch() {
    let pairs = vec![pair(2, 0), pair(2, 1), pair(9, 2)];
    let batches = make_batches(&pairs, 10, 0).unwrap();
    assert_eq!(batches.len(), 2);
    let mut sizes: Vec<Vec<usize>> = batches
        .iter()
        .map(|b| {
            let mut i = b.indices.clone();
            i.sort();
            i
        })
        .collect();
    sizes.sort();
    assert_eq!(sizes, vec![vec![0, 1], vec![2]]);
}

#[test]
fn oversized_sentence_is_rejected_with_index() {
    let pairs = vec![pair(2, 0), pair(2, 1), pair(9, 2)];
    match make_batches(&pairs, 8, 0) {
        Err(Error::SentenceTooLong { index: 2, len: 9, max_tokens: 8 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn seed_changes_composition_not_contents() {
    let pairs: Vec<EncodedPair> = (0..40).map(|i| pair(3, i)).collect();
    let a = make_batches(&pairs, 12, 1).unwrap();
    let b = make_batches(&pairs, 12, 2).unwrap();
    let comp = |bs: &[Batch]| {
        let mut v: Vec<Vec<usize>> = bs
            .iter()
            .map(|b| {
                let mut i = b.indices.clone();
                i.sort();
                i
            })
            .collect();
        v.sort();
        v
    };
    assert_ne!(comp(&a), comp(&b));
    let flat = |bs: &[Batch]| {
        let mut v: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
        v.sort();
        v
    };
    assert_eq!(flat(&a), flat(&b));
}

proptest! {
    #[test]
    fn batching_preserves_corpus(lens in prop::collection::vec(0usize..12, 1..80), max_tokens in 12usize..64, seed: u64) {
        let pairs: Vec<EncodedPair> = lens.iter().enumerate().map(|(i, &l)| pair(l, i)).collect();
        let batches = make_batches(&pairs, max_tokens, seed).unwrap();
        let total: usize = batches.iter().map(Batch::size).sum();
        prop_assert_eq!(total, pairs.len());
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..pairs.len()).collect::<Vec<_>>());
        for b in &batches {
            let longest = b.indices.iter().map(|&i| pairs[i].len().max(1)).max().unwrap();
            prop_assert!(b.size() * longest <= max_tokens);
        }
    }
}
