use gradsup::autodiff::{finite_difference_check, input_gradient};
use gradsup::data::{load_jsonl, pair_index, save_jsonl, split, Example};
use gradsup::evaluation::{gradient_alignment, mean_average_precision};
use gradsup::gs::{gs_loss, CounterfactualPair, GsConfig};
use gradsup::models::{init_model, Activation, ModelParams};
use gradsup::{Dataset, Tensor};
use proptest::prelude::*;

fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|n| (nonzero_vec(n), nonzero_vec(n)))
}

proptest! {
    #[test]
    fn gs_loss_range_scale_symmetry((g, h) in vec_pair(), a in 0.01..50.0f64, b in 0.01..50.0f64) {
        let base = gs_loss(&g, &h, 1e-8).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&base));
        let gs: Vec<f64> = g.iter().map(|v| a * v).collect();
        let hs: Vec<f64> = h.iter().map(|v| b * v).collect();
        prop_assert!((gs_loss(&gs, &hs, 1e-8).unwrap() - base).abs() < 1e-10);
        prop_assert!((gs_loss(&h, &g, 1e-8).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn gs_loss_of_negated_target_mirrors((g, h) in vec_pair()) {
        let neg: Vec<f64> = h.iter().map(|v| -v).collect();
        let sum = gs_loss(&g, &h, 1e-8).unwrap() + gs_loss(&g, &neg, 1e-8).unwrap();
        prop_assert!((sum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn map_is_rank_based(
        rows in 1usize..30,
        cols in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..rows * cols).map(|_| f64::from(rng.random_range(0..50u8))).collect();
        let labels: Vec<f64> = (0..rows * cols).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
        let s = Tensor::new(rows, cols, raw.clone()).unwrap();
        let t = Tensor::new(rows, cols, raw.iter().map(|x| 3.0 * x + 7.0).collect()).unwrap();
        let l = Tensor::new(rows, cols, labels).unwrap();
        let (a, b) = (mean_average_precision(&s, &l).unwrap(), mean_average_precision(&t, &l).unwrap());
        prop_assert_eq!(&a.per_class, &b.per_class);
        for ap in a.per_class.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(ap));
        }
    }

    #[test]
    fn pairs_are_unordered(a in 0usize..100, b in 0usize..100) {
        prop_assume!(a != b);
        prop_assert_eq!(CounterfactualPair::new(a, b).unwrap(), CounterfactualPair::new(b, a).unwrap());
    }
}

fn linked_dataset(values: &[(f64, f64, bool)]) -> Dataset {
    let mut examples = Vec::new();
    for (i, &(x, y, paired)) in values.iter().enumerate() {
        let label = u8::from(i % 2 == 0);
        examples.push(Example::features(format!("e{i}"), vec![x, y], vec![label], "train"));
        if paired {
            examples.push(
                Example::features(format!("e{i}-cf"), vec![-x - 1.0, y], vec![1 - label], "train")
                    .with_counterfactual_of(format!("e{i}")),
            );
        }
    }
    Dataset::new(examples).unwrap()
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((0.0..5.0f64, -1e6..1e6f64, any::<bool>()), 1..20).prop_map(|v| linked_dataset(&v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trip(d in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_jsonl(&d, &path).unwrap();
        prop_assert_eq!(load_jsonl(&path).unwrap(), d);
    }

    #[test]
    fn split_keeps_pairs_together(d in dataset_strategy(), seed in any::<u64>()) {
        let parts = split(&d, &[0.5, 0.3, 0.2], seed).unwrap();
        prop_assert_eq!(parts.iter().map(Dataset::len).sum::<usize>(), d.len());
        let pairs_after: usize = parts.iter().map(|p| pair_index(p).len()).sum();
        prop_assert_eq!(pairs_after, pair_index(&d).len());
    }

    #[test]
    fn alignment_is_a_cosine(d in dataset_strategy(), seed in any::<u64>()) {
        let pairs = pair_index(&d);
        prop_assume!(!pairs.is_empty());
        let m = init_model(&[2, 4, 1], Activation::Tanh, seed).unwrap();
        let a = gradient_alignment(&[m], &pairs, &d, &GsConfig::default()).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a.mean_cosine));
    }

    #[test]
    fn input_gradient_matches_finite_differences(seed in any::<u64>(), x in prop::collection::vec(-2.0..2.0f64, 3)) {
        let m = init_model(&[3, 5, 2], Activation::Tanh, seed).unwrap();
        // The input enters as the checker's parameter, shifted by a zero leaf
        // that the input gradient is taken against.
        let err = finite_difference_check(
            |tape, vars| {
                let mv = m.attach(tape);
                let origin = tape.leaf(Tensor::zeros(1, 3));
                let logits = mv.forward(origin.add(vars[0])?)?;
                let selected = gradsup::gs::select_supervised_output(logits, &[1])?;
                let g = input_gradient(selected, origin, true)?;
                Ok(g.mul(g)?.sum())
            },
            &[Tensor::row(&x)],
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-5, "relative error {}", err);
    }
}

#[test]
fn linear_model_alignment_matches_direction() {
    // The positive example sits at larger x, so a model increasing in x is aligned.
    let d = linked_dataset(&[(1.0, 0.0, true)]);
    let pairs = pair_index(&d);
    let up = gradient_alignment(&[ModelParams::linear(&[1.0, 0.0], 0.0)], &pairs, &d, &GsConfig::default()).unwrap();
    let down = gradient_alignment(&[ModelParams::linear(&[-2.0, 0.0], 0.0)], &pairs, &d, &GsConfig::default()).unwrap();
    assert!(up.mean_cosine > 1.0 - 1e-12);
    assert!(down.mean_cosine < -1.0 + 1e-12);
}
