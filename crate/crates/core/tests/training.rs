use boundary_spot::data::{gen_dataset, Dataset, DatasetConfig, Sample};
use boundary_spot::model::train::train_step;
use boundary_spot::model::{load_checkpoint, save_checkpoint, train_loop, Spotter, SpotterConfig, TrainConfig};
use boundary_spot::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spotter() -> SpotterConfig {
    SpotterConfig {
        rec_channels: 16,
        hidden: 32,
        attention: 32,
        ..Default::default()
    }
}

fn dataset(dir: &std::path::Path, count: usize) -> Vec<Sample> {
    gen_dataset(&DatasetConfig { count, ..Default::default() }, dir, 7).unwrap();
    Dataset::load(dir).unwrap().samples
}

#[test]
fn training_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = dataset(&tmp.path().join("ds"), 6);
    let cfg = TrainConfig { seed: 7, ..TrainConfig::with_epochs(2) };
    let mut runs = Vec::new();
    for i in 0..2 {
        let mut sp = Spotter::new(small_spotter(), 7).unwrap();
        let m = train_loop(&mut sp, &samples, &samples, &cfg, |_, _| Ok(())).unwrap();
        let path = tmp.path().join(format!("{i}.ckpt"));
        save_checkpoint(&sp, &path).unwrap();
        runs.push((m, std::fs::read(&path).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].0.len(), 2);
}

#[test]
fn single_example_overfits() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = dataset(&tmp.path().join("ds"), 1);
    let cfg = TrainConfig {
        jitter: 0.0,
        point_jitter: 0.0,
        ..TrainConfig::with_epochs(1)
    };
    let mut sp = Spotter::new(small_spotter(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut last = f64::INFINITY;
    for step in 0..300 {
        last = train_step(&mut sp, &samples, &[(0, 0)], &cfg, cfg.lr, &mut rng).unwrap().total;
        if last < 0.01 {
            eprintln!("converged after {step} steps");
            break;
        }
    }
    assert!(last < 0.01, "loss {last}");
}

#[test]
fn empty_dataset_is_rejected() {
    let mut sp = Spotter::new(small_spotter(), 0).unwrap();
    let r = train_loop(&mut sp, &[], &[], &TrainConfig::default(), |_, _| Ok(()));
    assert!(matches!(r, Err(Error::EmptyDataset)));
}

#[test]
fn checkpoint_round_trip_gives_identical_spots() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = dataset(&tmp.path().join("ds"), 4);
    let mut sp = Spotter::new(small_spotter(), 5).unwrap();
    train_loop(&mut sp, &samples, &samples, &TrainConfig::with_epochs(1), |_, _| Ok(())).unwrap();
    let path = tmp.path().join("m.ckpt");
    save_checkpoint(&sp, &path).unwrap();
    let mut loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, sp.config);
    let a = sp.spot_samples(&samples, 0.05, 9).unwrap();
    let b = loaded.spot_samples(&samples, 0.05, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.spots.len()).sum::<usize>(), samples.iter().map(|s| s.annotation.instances.len()).sum::<usize>());
}
