use proptest::prelude::*;

use mixce::schedules::*;

#[test]
fn alpha_endpoints() {
    assert_eq!(alpha_at(1000, 1000, 0.5).unwrap(), 0.5);
    assert_eq!(alpha_at(500, 1000, 0.5).unwrap(), 0.25);
    assert!(alpha_at(0, 1000, 0.5).is_err());
    assert!(alpha_at(1001, 1000, 0.5).is_err());
    assert!(alpha_at(1, 10, 0.0).is_err());
}

#[test]
fn fixed_alpha_is_constant() {
    let p = AlphaPolicy::Fixed(0.5);
    for i in [1, 17, 300] {
        assert_eq!(p.at(i, 300).unwrap(), 0.5);
    }
}

#[test]
fn epsilon_endpoints() {
    assert_eq!(epsilon_at(1000, 1000, 0.7).unwrap(), 0.7);
    assert!((epsilon_at(500, 1000, 0.8).unwrap() - 0.8f64.sqrt()).abs() < 1e-12);
    assert!((epsilon_at(1, 1_000_000_000, 0.8).unwrap() - 1.0).abs() < 1e-9);
    assert!(epsilon_at(1, 10, 1.0).is_err());
    assert!(epsilon_at(1, 10, 0.0).is_err());
}

#[test]
fn plateau_rules() {
    assert_eq!(lr_on_plateau(&[10.0, 11.0, 12.0], 1.0, 4, 0.5), 1.0);
    assert_eq!(lr_on_plateau(&[12.0, 11.9, 11.8, 11.7, 11.6], 1.0, 4, 0.5), 0.5);
    assert_eq!(lr_on_plateau(&[], 1.0, 4, 0.5), 1.0);
}

#[test]
fn two_plateaus_quarter_the_rate() {
    // Replay epoch by epoch, feeding each decision into the next call.
    let history = [12.0, 11.9, 11.8, 11.7, 11.6, 11.5, 11.4, 11.3, 11.2];
    let mut lr = 1.0;
    let mut reductions = Vec::new();
    for e in 1..=history.len() {
        let next = lr_on_plateau(&history[..e], lr, 4, 0.5);
        if next != lr {
            reductions.push(e);
        }
        lr = next;
    }
    assert_eq!(reductions, vec![5, 9]);
    assert_eq!(lr, 0.25);
}

proptest! {
    #[test]
    fn monotone_schedules(total in 2usize..5000, m in 0.05f64..=1.0, d in 0.05f64..0.95) {
        let mut prev_a = 0.0;
        let mut prev_e = 1.0;
        let step = (total / 50).max(1);
        for i in (1..=total).step_by(step).chain([total]) {
            let a = alpha_at(i, total, m).unwrap();
            let e = epsilon_at(i, total, d).unwrap();
            prop_assert!(a >= prev_a && a <= m + 1e-12);
            prop_assert!(e <= prev_e && e >= d - 1e-12);
            if m <= 0.5 {
                prop_assert!(1.0 - a >= a);
            }
            prev_a = a;
            prev_e = e;
        }
    }
}
