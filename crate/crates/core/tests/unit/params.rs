use mixce::tensor::Tensor;
use mixce::Error;
use proptest::prelude::*;

use mixce::transformer::*;

fn store(values: &[(String, Vec<usize>, Vec<f32>)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, shape, data) in values {
        s.insert(n.clone(), Tensor::new(shape.clone(), data.clone()).unwrap()).unwrap();
    }
    s
}

#[test]
fn header_layout() {
    let s = store(&[("w".into(), vec![2], vec![1.0, -2.5])]);
    let b = s.to_bytes();
    assert_eq!(&b[..6], b"MIXCE1");
    assert_eq!(&b[6..10], &1u32.to_le_bytes());
    assert_eq!(&b[10..14], &1u32.to_le_bytes());
    assert_eq!(b[14], b'w');
    assert_eq!(&b[15..19], &1u32.to_le_bytes());
    assert_eq!(&b[19..23], &2u32.to_le_bytes());
    assert_eq!(&b[23..27], &1.0f32.to_le_bytes());
    assert_eq!(b.len(), 31);
}

#[test]
fn rejects_corrupt_input() {
    assert!(ParamStore::from_bytes(b"NOTIT1\0\0\0\0").is_err());
    let s = store(&[("w".into(), vec![2], vec![1.0, 2.0])]);
    let b = s.to_bytes();
    assert!(ParamStore::from_bytes(&b[..b.len() - 1]).is_err());
}

#[test]
fn averaging_identical_and_opposite() {
    let a = store(&[("w".into(), vec![3], vec![1.0, -2.0, 0.5])]);
    let same = ParamStore::average(&[&a, &a, &a, &a, &a]).unwrap();
    assert_eq!(same.tensor(0).data(), a.tensor(0).data());
    let neg = store(&[("w".into(), vec![3], vec![-1.0, 2.0, -0.5])]);
    let zero = ParamStore::average(&[&a, &neg]).unwrap();
    assert!(zero.tensor(0).data().iter().all(|&v| v == 0.0));
}

#[test]
fn averaging_rejects_shape_mismatch() {
    let a = store(&[("w".into(), vec![2], vec![1.0, 2.0])]);
    let b = store(&[("w".into(), vec![1, 2], vec![1.0, 2.0])]);
    assert!(matches!(ParamStore::average(&[&a, &b]), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn bytes_round_trip_exactly(
        tensors in prop::collection::vec(
            (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                prop::collection::vec(any::<f32>(), r * c).prop_map(move |d| (vec![r, c], d))
            }),
            1..5,
        )
    ) {
        let named: Vec<_> = tensors.into_iter().enumerate().map(|(i, (s, d))| (format!("p{i}"), s, d)).collect();
        let s = store(&named);
        let bytes = s.to_bytes();
        let back = ParamStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
