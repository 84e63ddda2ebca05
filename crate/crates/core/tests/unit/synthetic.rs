use mixce::data::*;
use std::collections::HashSet;

#[test]
fn singleton_sets_give_a_cipher() {
    let task = SynonymTask::uniform_sets(5, &[1.0], 2, 6, 3);
    let pairs = task.sample_pairs(200, 3, true).unwrap();
    for p in &pairs {
        assert_eq!(p.src.len(), p.tgt.len());
        for (s, t) in p.src.iter().zip(&p.tgt) {
            assert_eq!(t, &format!("t{}_0", &s[1..]));
        }
    }
}

#[test]
fn synonym_rate_converges_to_weight() {
    let task = SynonymTask::uniform_sets(1, &[0.5, 0.5], 1, 1, 11);
    let pairs = task.sample_pairs(10_000, 11, true).unwrap();
    let a = pairs.iter().filter(|p| p.tgt[0] == "t0_0").count() as f64 / 10_000.0;
    assert!((a - 0.5).abs() < 0.02, "{a}");
}

#[test]
fn same_seed_same_corpus() {
    let mut task = SynonymTask::uniform_sets(6, &[0.4, 0.3, 0.3], 2, 5, 9);
    task.n_probes = 10;
    task.noise = 0.1;
    let a = generate_synonym_corpus(&task, 300).unwrap();
    let b = generate_synonym_corpus(&task, 300).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a"), dir.path().join("b"));
    write_probes(&pa, &a.probes).unwrap();
    write_probes(&pb, &b.probes).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(read_probes(&pa).unwrap(), a.probes);
}

#[test]
fn probes_carry_gold_inside_synonym_set() {
    let mut task = SynonymTask::uniform_sets(4, &[0.34, 0.33, 0.33], 2, 4, 5);
    task.n_probes = 50;
    let corpus = generate_synonym_corpus(&task, 10).unwrap();
    assert_eq!(corpus.probes.len(), 50);
    for p in &corpus.probes {
        assert!(p.synonyms.contains(&p.gold));
        assert_eq!(p.synonyms.len(), 3);
        assert!(p.prefix.len() < p.src.len());
    }
}

#[test]
fn rejects_overlapping_sets_and_bad_weights() {
    let mut task = SynonymTask::uniform_sets(2, &[0.5, 0.5], 1, 2, 0);
    task.synonyms[1][0].0 = "t0_0".into();
    assert!(task.validate().is_err());
    let task = SynonymTask::uniform_sets(2, &[0.5, 0.4], 1, 2, 0);
    assert!(task.validate().is_err());
}

#[test]
fn agreement_repeats_slots() {
    let mut task = SynonymTask::uniform_sets(3, &[0.34, 0.33, 0.33], 6, 6, 1);
    task.agreement = 1.0;
    for p in task.sample_pairs(50, 1, false).unwrap() {
        let slots: HashSet<&str> = p.tgt.iter().map(|w| &w[w.len() - 1..]).collect();
        assert_eq!(slots.len(), 1);
    }
}
