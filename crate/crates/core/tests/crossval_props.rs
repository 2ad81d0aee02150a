use covelm_core::elm::{train, Activation, TrainConfig};
use covelm_core::error::Error;
use covelm_core::eval::{ablate_subsets, cross_validate, kfold_split, sweep_hidden, CvConfig};
use covelm_core::features::FeatureSubset;
use covelm_core::ingest::class_order;
use covelm_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Matrix::from_fn(n, 168, |r, c| {
        let shift = if c < 12 { 3.0 * labels[r] as f64 } else { 0.0 };
        shift + rng.gen_range(-1.0..1.0)
    });
    (x, labels)
}

fn config(hidden: usize) -> CvConfig {
    CvConfig {
        hidden,
        activation: Activation::RbfL2,
        seed: 1,
        subset: FeatureSubset::Combined,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn folds_partition_the_samples(
        labels in prop::collection::vec(0usize..3, 12..120),
        k in 2usize..8,
        seed in any::<u64>(),
        stratified in any::<bool>(),
    ) {
        let plan = kfold_split(&labels, k, seed, stratified);
        let smallest = (0..3)
            .map(|c| labels.iter().filter(|&&l| l == c).count())
            .filter(|&n| n > 0)
            .min()
            .unwrap();
        if stratified && smallest < k {
            prop_assert!(plan.is_err());
            return Ok(());
        }
        let plan = plan.unwrap();
        let mut seen = vec![0; labels.len()];
        for f in 0..k {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
            let train = plan.train_indices(f);
            prop_assert_eq!(train.len() + plan.test_indices(f).len(), labels.len());
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let sizes: Vec<usize> = (0..k).map(|f| plan.test_indices(f).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn training_is_invariant_to_row_order(seed in any::<u64>()) {
        let (x, labels) = dataset(30, 5);
        let mut order: Vec<usize> = (0..30).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let xp = Matrix::from_fn(30, 168, |r, c| x[(order[r], c)]);
        let lp: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let cfg = TrainConfig { hidden: 12, activation: Activation::Sigmoid, seed: 3 };
        let a = train(&x, &labels, &class_order(), &cfg).unwrap();
        let b = train(&xp, &lp, &class_order(), &cfg).unwrap();
        let (_, pa) = a.predict(&x).unwrap();
        let (_, pb) = b.predict(&x).unwrap();
        prop_assert_eq!(pa, pb);
    }
}

#[test]
fn report_bookkeeping_adds_up() {
    let (x, labels) = dataset(61, 1);
    let plan = kfold_split(&labels, 5, 2, true).unwrap();
    let report = cross_validate(&x, &labels, &class_order(), &plan, &config(25)).unwrap();
    assert_eq!(report.pooled_confusion.total(), 61);
    assert_eq!(
        report
            .folds
            .iter()
            .map(|f| f.confusion.total())
            .sum::<u64>(),
        61
    );
    for f in &report.folds {
        assert_eq!(f.confusion.total() as usize, f.test_size);
        assert_eq!(f.train_size + f.test_size, 61);
    }
    assert!(report.accuracy() > 0.5, "accuracy {}", report.accuracy());
    assert_eq!(report.sensitivity_ci.per_class.len(), 3);
    assert_eq!(report.fold_sensitivities().len(), 5);
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let (x, labels) = dataset(45, 2);
    let plan = kfold_split(&labels, 3, 0, true).unwrap();
    let a = cross_validate(&x, &labels, &class_order(), &plan, &config(15)).unwrap();
    let b = cross_validate(&x, &labels, &class_order(), &plan, &config(15)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let other = CvConfig {
        seed: 2,
        ..config(15)
    };
    let c = cross_validate(&x, &labels, &class_order(), &plan, &other).unwrap();
    assert_ne!(
        serde_json::to_string(&a.folds[0].report).unwrap() + &format!("{:?}", a.pooled_roc),
        serde_json::to_string(&c.folds[0].report).unwrap() + &format!("{:?}", c.pooled_roc)
    );
}

#[test]
fn sweep_and_ablation_shapes() {
    let (x, labels) = dataset(36, 3);
    let plan = kfold_split(&labels, 3, 0, true).unwrap();
    let rows = sweep_hidden(&x, &labels, &class_order(), &plan, &[4, 8, 16], &config(1)).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.hidden).collect::<Vec<_>>(),
        [4, 8, 16]
    );
    assert!(sweep_hidden(&x, &labels, &class_order(), &plan, &[], &config(1)).is_err());

    let entries = ablate_subsets(&x, &labels, &class_order(), &plan, &config(10)).unwrap();
    let subsets: Vec<FeatureSubset> = entries.iter().map(|e| e.subset).collect();
    assert_eq!(subsets, FeatureSubset::ALL);
    for e in &entries {
        assert_eq!(e.fold_sensitivities.len(), 3);
        assert!(e.fold_sensitivities.contains(&e.median) || e.fold_sensitivities.len() % 2 == 0);
    }
}

#[test]
fn failing_fold_is_identified() {
    // The single pneumonia sample is missing from one fold's training rows.
    let (x, _) = dataset(12, 4);
    let mut labels = vec![0; 12];
    labels[6..11].fill(1);
    labels[11] = 2;
    let plan = kfold_split(&labels, 3, 0, false).unwrap();
    match cross_validate(&x, &labels, &class_order(), &plan, &config(5)) {
        Err(Error::Fold { fold, .. }) => assert!(plan.test_indices(fold).contains(&11)),
        other => panic!("expected a fold error, got {other:?}"),
    }
}
