use ndarray::Array3;
use pairmix::losses::*;
use pairmix::Error;
use proptest::prelude::*;

fn map(values: Vec<f64>) -> Array3<f64> {
    let n = values.len();
    Array3::from_shape_vec((1, 1, n), values).unwrap()
}

fn pair() -> impl Strategy<Value = (Array3<f64>, Array3<f64>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-30.0f64..30.0, n),
            prop::collection::vec(-30.0f64..30.0, n),
        )
            .prop_map(|(a, b)| (map(a), map(b)))
    })
}

proptest! {
    #[test]
    fn generator_loss_swaps_arguments((a, b) in pair()) {
        prop_assert_eq!(relativistic_g_loss(&a, &b).unwrap(), relativistic_d_loss(&b, &a).unwrap());
    }

    #[test]
    fn critic_loss_is_positive_and_finite((a, b) in pair()) {
        let v = relativistic_d_loss(&a, &b).unwrap();
        prop_assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn critic_loss_decreases_as_real_pulls_ahead((a, b) in pair(), shift in 0.1f64..5.0) {
        let ahead = a.mapv(|v| v + shift);
        prop_assert!(relativistic_d_loss(&ahead, &b).unwrap() < relativistic_d_loss(&a, &b).unwrap());
    }

    #[test]
    fn equal_logits_give_ln2((a, _) in pair()) {
        prop_assert!((relativistic_d_loss(&a, &a).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn l1_is_symmetric_and_zero_on_equal((a, b) in pair()) {
        prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let big = map(vec![1e4, -1e4]);
    let small = map(vec![-1e4, 1e4]);
    let v = relativistic_d_loss(&big, &small).unwrap();
    assert!(v.is_finite());
    assert!((v - 1e4).abs() < 1e-6);
    let (_, gr, gf) = relativistic_d_loss_grad(&big, &small).unwrap();
    assert!(gr.iter().chain(gf.iter()).all(|g| g.is_finite()));
}

#[test]
fn cycle_and_identity_sum_both_directions() {
    let x = map(vec![0.0, 1.0]);
    let y = map(vec![2.0, 2.0]);
    let x_rec = map(vec![1.0, 1.0]);
    let y_rec = map(vec![2.0, 0.0]);
    assert_eq!(cycle_loss(&x, &x_rec, &y, &y_rec).unwrap(), 0.5 + 1.0);
    assert_eq!(identity_loss(&x, &x_rec, &y, &y_rec).unwrap(), 0.5 + 1.0);
    assert_eq!(paired_l1_loss(&y_rec, &y, &x_rec, &x, true).unwrap(), 1.0 + 0.5);
    assert!(matches!(paired_l1_loss(&y_rec, &y, &x_rec, &x, false), Err(Error::Contract(_))));
}

#[test]
fn weights_reject_negative_or_nan() {
    for bad in [-1.0, f64::NAN, f64::INFINITY] {
        let w = LossWeights {
            lambda3: bad,
            ..LossWeights::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn zero_paired_weight_matches_unpaired_total() {
    let r = LossReport {
        gan_g: 0.3,
        cycle: 0.2,
        identity: 0.1,
        l1_paired: 0.9,
        ..LossReport::default()
    };
    let w = LossWeights {
        lambda4: 0.0,
        ..LossWeights::default()
    };
    assert_eq!(
        total_generator_loss(&r, &w, true).unwrap(),
        total_generator_loss(&r, &w, false).unwrap()
    );
}
