use mixce::data::*;
use mixce::Error;
use std::fs;

#[test]
fn load_keeps_order_and_empty_lines() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
    fs::write(&s, "a b\n\n").unwrap();
    fs::write(&t, "x\ny z\n").unwrap();
    let pairs = load_parallel(&s, &t).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].src, vec!["a", "b"]);
    assert!(pairs[1].src.is_empty());
    assert_eq!(pairs[1].tgt, vec!["y", "z"]);
}

#[test]
fn load_rejects_line_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
    fs::write(&s, "a\nb\nc\n").unwrap();
    fs::write(&t, "x\n").unwrap();
    match load_parallel(&s, &t) {
        Err(Error::LineCountMismatch { src_lines: 3, tgt_lines: 1 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn write_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
    let pairs = vec![
        Pair { src: tokenize("the cat sat"), tgt: tokenize("le chat") },
        Pair { src: vec![], tgt: tokenize("vide") },
        Pair { src: tokenize("x"), tgt: vec![] },
    ];
    write_parallel(&s, &t, &pairs).unwrap();
    assert_eq!(load_parallel(&s, &t).unwrap(), pairs);
}
