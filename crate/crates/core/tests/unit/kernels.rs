use mixce::kernels::*;

fn naive(spec: Gemm, a: &[f32], b: &[f32]) -> Vec<f64> {
    let Gemm { m, k, n, trans_a, trans_b, .. } = spec;
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
                let bv = if trans_b { b[j * k + p] } else { b[p * n + j] };
                out[i * n + j] += av as f64 * bv as f64;
            }
        }
    }
    out
}

fn ramp(len: usize, scale: f32) -> Vec<f32> {
    (0..len).map(|i| ((i * 7 % 13) as f32 - 6.0) * scale).collect()
}

#[test]
fn all_layouts_match_naive_product() {
    let (m, k, n) = (5, 7, 3);
    let a = ramp(m * k, 0.1);
    let b = ramp(k * n, 0.2);
    for ta in [false, true] {
        for tb in [false, true] {
            let spec = Gemm::new(m, k, n).trans_a(ta).trans_b(tb);
            let mut c = vec![0.0; m * n];
            gemm(spec, &a, &b, &mut c);
            let expect = naive(spec, &a, &b);
            for (x, y) in c.iter().zip(&expect) {
                assert!((*x as f64 - y).abs() < 1e-5, "ta={ta} tb={tb}");
            }
        }
    }
}

#[test]
fn accumulate_adds_into_output() {
    let a = vec![1.0, 2.0];
    let b = vec![3.0, 4.0];
    let mut c = vec![10.0];
    gemm(Gemm::new(1, 2, 1).accumulate(true), &a, &b, &mut c);
    assert_eq!(c, vec![21.0]);
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let (m, k, n) = (64, 48, 40);
    let a = ramp(m * k, 0.01);
    let b = ramp(k * n, 0.03);
    let mut c1 = vec![0.0; m * n];
    let mut c2 = vec![0.0; m * n];
    gemm_sequential(Gemm::new(m, k, n), &a, &b, &mut c1);
    gemm_parallel(Gemm::new(m, k, n), &a, &b, &mut c2);
    assert_eq!(c1, c2);
}
