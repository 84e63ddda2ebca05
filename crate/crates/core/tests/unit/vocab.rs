use mixce::data::tokenize;
use mixce::data::UNK;
use mixce::data::*;

#[test]
fn three_tokens_plus_reserved() {
    let v = build_vocab(&[tokenize("a b c a")], 10).unwrap();
    assert_eq!(v.len(), 7);
    assert_eq!(v.id("a"), 4);
}

#[test]
fn ties_break_lexicographically() {
    let v = build_vocab(&[tokenize("zeta alpha mid zeta alpha mid")], 6).unwrap();
    assert_eq!(v.words(), &["alpha".to_string(), "mid".to_string()]);
    assert_eq!(v.id("zeta"), UNK);
}

#[test]
fn rejects_tiny_max_size() {
    assert!(build_vocab(&[tokenize("a")], 4).is_err());
}

#[test]
fn unknown_rate_matches_brute_count() {
    let corpus: Vec<Vec<String>> =
        (0..50).map(|i| (0..(i % 7 + 1)).map(|j| format!("w{}", (i * 3 + j * 5) % 23)).collect()).collect();
    let v = build_vocab(&corpus, 14).unwrap();
    let mut freq = std::collections::BTreeMap::new();
    for s in &corpus {
        for w in s {
            *freq.entry(w.clone()).or_insert(0usize) += 1;
        }
    }
    let mut ranked: Vec<_> = freq.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let kept: std::collections::HashSet<_> = ranked.iter().take(10).map(|(w, _)| (*w).clone()).collect();
    let total: usize = corpus.iter().map(Vec::len).sum();
    let brute_unk = corpus.iter().flatten().filter(|w| !kept.contains(*w)).count();
    let unk = corpus.iter().flat_map(|s| v.encode(s)).filter(|&id| id == UNK).count();
    assert_eq!(unk, brute_unk);
    assert!(unk < total);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = build_vocab(&[tokenize("b a c a")], 10).unwrap();
    let p = dir.path().join("vocab");
    v.save(&p).unwrap();
    assert_eq!(Vocab::load(&p).unwrap(), v);
}
