use mixce::tensor::{Graph, Tensor, Var};
use mixce::{Error, Result};
use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mixce::tensor::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn sum_of_squares_is_tight() {
    for seed in 0..5 {
        let x = random(&[7], seed);
        let err = check_gradients(
            |g, v| {
                let sq = g.mul(v, v);
                Ok(g.sum(sq))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn rejects_internal_randomness() {
    let counter = Cell::new(0u32);
    let x = random(&[3], 0);
    let res = check_gradients(
        |g, v| {
            counter.set(counter.get() + 1);
            let s = g.scale(v, counter.get() as f32);
            Ok(g.sum(s))
        },
        &x,
        1e-3,
    );
    assert!(matches!(res, Err(Error::NonDeterministic { .. })));
}

#[test]
fn rejects_non_positive_step() {
    let x = random(&[3], 0);
    assert!(check_gradients(|g, v| Ok(g.sum(v)), &x, 0.0).is_err());
}

/// Every differentiable op, composed on small random inputs.
#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let w = random(&[4, 3], seed + 1);
        let w2 = random(&[2, 3, 3], seed + 2);
        let gamma = random(&[3], seed + 3);
        let beta = random(&[3], seed + 4);
        let table = random(&[5, 3], seed + 5);
        let mask: Vec<bool> = (0..2 * 3 * 3).map(|i| i % 7 == 3).collect();
        let weights: Vec<f32> = (0..2 * 3 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dropout_seed = rng.gen::<u64>();

        let f = |g: &mut Graph, x: Var| -> Result<Var> {
            g.set_train(true);
            // x: [2, 3, 4]
            let wv = g.leaf(&w);
            let h = g.matmul(x, wv, false); // [2,3,3]
            let t = g.leaf(&table);
            let e = g.embedding(t, &[0, 4, 2, 2, 1, 3]);
            let e = g.reshape(e, &[2, 3, 3]);
            let h = g.add(h, e);
            let (gm, bt) = (g.leaf(&gamma), g.leaf(&beta));
            let h = g.layer_norm(h, gm, bt, 1e-5);
            let h = g.add_bias(h, bt);
            let mut drng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let h = g.dropout(h, 0.2, &mut drng);
            let w2v = g.leaf(&w2);
            let scores = g.matmul(h, w2v, true); // [2,3,3]
            let scores = g.masked_fill(scores, &mask, -1e9);
            let att = g.softmax(scores);
            let ctx = g.matmul(att, h, false);
            let ctx = g.permute(ctx, &[0, 2, 1]);
            let sq = g.mul(ctx, ctx);
            let r = g.relu(sq);
            let r = g.scale(r, 0.5);
            let r = g.add(r, ctx);
            let lp = g.log_softmax(r, 1)?;
            Ok(g.weighted_nll(lp, weights.clone(), 0.25))
        };
        let x = random(&[2, 3, 4], seed + 100);
        let err = check_gradients(f, &x, 1e-3).unwrap();
        assert!(err <= 1e-2, "seed {seed}: {err}");
    }
}
