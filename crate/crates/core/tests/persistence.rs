use rand::Rng;
use vpm::data::TransitionDataset;
use vpm::models::{Architecture, RatioModel};
use vpm::seeded_rng;

fn dataset(rewards: bool) -> TransitionDataset {
    let mut rng = seeded_rng(11);
    let n = 50;
    let xs: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let xps: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>() * 1e-7 - 1e5).collect();
    let r = rewards.then(|| (0..n).map(|i| i as f64 / 7.0).collect());
    TransitionDataset::from_flat(2, xs, xps, r).unwrap()
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for rewards in [false, true] {
        let ds = dataset(rewards);
        let path = dir.path().join(format!("pairs_{rewards}.csv"));
        ds.save_csv(&path).unwrap();
        let back = TransitionDataset::load_csv(&path).unwrap();
        assert_eq!(back.dim(), 2);
        assert_eq!(back.xs(), ds.xs());
        assert_eq!(back.xps(), ds.xps());
        assert_eq!(back.rewards(), ds.rewards());
    }
}

#[test]
fn loading_a_missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(TransitionDataset::load_csv(dir.path().join("absent.csv")).is_err());
}

#[test]
fn model_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded_rng(3);
    let models = [
        RatioModel::new(Architecture::tabular(6), &mut rng).unwrap(),
        RatioModel::new(Architecture::fourier(2, 16, 1.5, &mut rng), &mut rng).unwrap(),
        RatioModel::new(Architecture::mlp_small(2), &mut rng).unwrap(),
    ];
    let probe: Vec<f64> = (0..20).map(|i| (i % 6) as f64).collect();
    for (k, model) in models.iter().enumerate() {
        let path = dir.path().join(format!("model{k}.json"));
        model.save(&path).unwrap();
        let back = RatioModel::load(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.architecture(), model.architecture());
        let xs = &probe[..10 * model.input_dim()];
        assert_eq!(back.value_batch(xs).unwrap(), model.value_batch(xs).unwrap());
    }
}
