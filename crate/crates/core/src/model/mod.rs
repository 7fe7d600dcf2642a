//! Numeric foundation: flat parameter vectors, a small softmax MLP, local
//! SGD, predicted label distributions and L1 distances.

mod dataset;
mod mlp;
mod params;

pub use dataset::{LabelDistributions, LocalDataset};
pub(crate) use dataset::population_variance;
pub use mlp::{Mlp, SgdConfig, TrainMode};
pub(crate) use mlp::softmax_in_place;
pub use params::{l1_distance, ParamVector};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn toy_data(n: usize, seed: u64) -> LocalDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let y = i % 3;
                let x: Vec<f64> = (0..4).map(|k| rng.random_range(-1.0..1.0) + (k == y) as u8 as f64).collect();
                (x, y)
            })
            .collect();
        LocalDataset::from_rows(3, rows).unwrap()
    }

    #[test]
    fn zero_lr_is_identity() {
        let mlp = Mlp::new(4, 5, 3);
        let p = mlp.init(&mut ChaCha8Rng::seed_from_u64(1));
        let cfg = SgdConfig { epochs: 3, lr: 0.0, ..Default::default() };
        let out = mlp.sgd_train(&p, &toy_data(12, 2), &cfg, 9).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn last_layer_only_freezes_hidden_span() {
        let mlp = Mlp::new(4, 5, 3);
        let p = mlp.init(&mut ChaCha8Rng::seed_from_u64(1));
        let cfg = SgdConfig { epochs: 2, lr: 0.3, mode: TrainMode::LastLayerOnly, ..Default::default() };
        let out = mlp.sgd_train(&p, &toy_data(12, 2), &cfg, 9).unwrap();
        let cut = p.final_span().start;
        assert_eq!(&out.values()[..cut], &p.values()[..cut]);
        assert_ne!(&out.values()[cut..], &p.values()[cut..]);
    }

    #[test]
    fn single_linear_step_matches_hand_gradient() {
        // zero weights, x = 2, y = 1: probs (0.5, 0.5), dlogits (0.5, -0.5)
        // dW = dlogits * x = (1, -1), db = (0.5, -0.5)
        let mlp = Mlp::linear(1, 2);
        let data = LocalDataset::from_rows(2, vec![(vec![2.0], 1)]).unwrap();
        let cfg = SgdConfig { epochs: 1, lr: 0.1, batch_size: 1, mode: TrainMode::Full };
        let out = mlp.sgd_train(&mlp.zeros(), &data, &cfg, 0).unwrap();
        let expect = [-0.1, 0.1, -0.05, 0.05];
        for (a, b) in out.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_give_uniform_soft_labels() {
        let mlp = Mlp::new(4, 5, 2);
        let data = LocalDataset::from_rows(2, vec![(vec![1.0, 2.0, 3.0, 4.0], 0), (vec![0.0; 4], 1)]).unwrap();
        let dist = mlp.infer_distributions(&mlp.zeros(), &data).unwrap();
        assert_eq!(dist.soft, vec![0.5, 0.5]);
        assert_eq!(dist.hard.iter().sum::<u64>(), 2);
    }

    #[test]
    fn hand_set_logits_force_argmax() {
        let mlp = Mlp::linear(1, 2);
        let p = ParamVector::new(vec![-1.0, 1.0, 0.0, 0.0], mlp.layout()).unwrap();
        let data =
            LocalDataset::from_rows(2, vec![(vec![-1.0], 0), (vec![-2.0], 1), (vec![3.0], 1)]).unwrap();
        let dist = mlp.infer_distributions(&p, &data).unwrap();
        assert_eq!(dist.hard, vec![2, 1]);
        assert!((dist.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infer_rejects_empty() {
        let mlp = Mlp::linear(1, 2);
        let empty = LocalDataset::new(1, 2, vec![], vec![]).unwrap();
        assert!(mlp.infer_distributions(&mlp.zeros(), &empty).is_err());
    }

    #[test]
    fn gradient_checks() {
        let data = toy_data(10, 5);
        let lin = Mlp::linear(4, 3);
        let p = lin.init(&mut ChaCha8Rng::seed_from_u64(3));
        assert!(lin.gradient_check(&p, &data).unwrap() < 1e-6);

        let mlp = Mlp::new(4, 16, 3);
        let p0 = mlp.init(&mut ChaCha8Rng::seed_from_u64(3));
        let cfg = SgdConfig { epochs: 20, lr: 0.1, batch_size: 5, mode: TrainMode::Full };
        let trained = mlp.sgd_train(&p0, &data, &cfg, 1).unwrap();
        assert!(mlp.gradient_check(&trained, &data).unwrap() < 1e-4);
    }

    #[test]
    fn degenerate_constant_features_give_finite_check() {
        let mlp = Mlp::new(3, 4, 2);
        let rows = (0..6).map(|i| (vec![1.0; 3], i % 2)).collect();
        let data = LocalDataset::from_rows(2, rows).unwrap();
        let p = mlp.init(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(mlp.gradient_check(&p, &data).unwrap().is_finite());
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let mlp = Mlp::new(4, 5, 3);
        let other = Mlp::new(4, 6, 3).zeros();
        assert!(mlp.sgd_train(&other, &toy_data(3, 0), &SgdConfig::default(), 0).is_err());
    }
}
