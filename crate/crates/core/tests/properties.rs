use proptest::prelude::*;

use vtada_core::adversarial::AdaptationMode;
use vtada_core::train::{TrainConfig, TrainSchedule};
use vtada_core::Tensor;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((r, c, data) in matrix()) {
        let s = Tensor::new(&[r, c], data).unwrap().softmax_rows().unwrap();
        for row in s.data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean((r, c, data) in matrix()) {
        prop_assume!(c >= 2);
        let ones = Tensor::new(&[c], vec![1.0; c]).unwrap();
        let zeros = Tensor::new(&[c], vec![0.0; c]).unwrap();
        let y = Tensor::new(&[r, c], data).unwrap().layer_norm(&ones, &zeros, 1e-6).unwrap();
        for row in y.data().chunks(c) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn grad_reverse_is_identity_forward_and_scaled_negation_backward(
        (r, c, data) in matrix(),
        lambda in 0.0f64..3.0,
    ) {
        let x = Tensor::param(&[r, c], data.clone()).unwrap();
        let y = x.grad_reverse(lambda).unwrap();
        prop_assert_eq!(y.data(), &data[..]);
        let w: Vec<f64> = (0..r * c).map(|k| k as f64 - 2.5).collect();
        y.mul(&Tensor::new(&[r, c], w.clone()).unwrap()).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, wi) in g.iter().zip(&w) {
            prop_assert_eq!(*gi, -lambda * wi);
        }
    }

    #[test]
    fn schedules_stay_in_range(p in 0.0f64..=1.0) {
        let s = TrainSchedule::default();
        let lr = s.lr_at(p).unwrap();
        let lambda = s.lambda_at(p).unwrap();
        prop_assert!(lr > 0.0 && lr <= s.eta0);
        prop_assert!((0.0..1.0).contains(&lambda));
        let q = (p + 0.01).min(1.0);
        prop_assert!(s.lr_at(q).unwrap() <= lr);
        prop_assert!(s.lambda_at(q).unwrap() >= lambda);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        mode in prop::sample::select(vec![
            AdaptationMode::SourceOnly,
            AdaptationMode::Dann,
            AdaptationMode::CdanConcat,
            AdaptationMode::CdanMultilinear,
        ]),
        batch in 1usize..64,
        eta0 in 1e-5f64..1.0,
        rotation in -180.0f64..180.0,
    ) {
        let mut cfg = TrainConfig::reference(mode, seed);
        cfg.batch = batch;
        cfg.schedule.eta0 = eta0;
        cfg.data.shift.rotation_deg = rotation;
        prop_assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
