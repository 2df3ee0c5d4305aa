use motionalign::data::{build_triplets, synthesize_dataset};
use motionalign::embedding::{ProviderSpec, StubProvider};
use motionalign::model::{Checkpoint, ModelConfig, MotionAutoEncoder};
use motionalign::skeleton::SkeletonModel;
use motionalign::trainer::{
    load_model, prepare_samples, read_metrics, train_records, RunConfig, Sample, TrainConfig,
    Trainer,
};
use motionalign::Error;

const FRAMES: usize = 8;

fn samples() -> Vec<Sample> {
    let skel = SkeletonModel::canonical();
    let recs = synthesize_dataset(3, 3, 2).unwrap();
    let provider = StubProvider::new(16, 1).unwrap();
    let mut trip = build_triplets(&recs, &skel, &provider, 6).unwrap();
    for t in &mut trip {
        t.motion.poses.truncate(FRAMES);
    }
    prepare_samples(&trip, &skel).unwrap()
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        epochs: 2,
        seed: 13,
        ..TrainConfig::default()
    }
}

fn fresh() -> Trainer {
    let model = MotionAutoEncoder::new(ModelConfig::small(1, 16, 2, 16, FRAMES), 4).unwrap();
    Trainer::new(model, train_cfg(), SkeletonModel::canonical()).unwrap()
}

#[test]
fn checkpoint_bytes_round_trip_exactly() {
    let data = samples();
    let mut t = fresh();
    t.train_epoch(&data).unwrap();
    let ck = t.checkpoint(&ProviderSpec::Stub { dim: 16, seed: 1 });
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let (model, _) = load_model(&path).unwrap();
    assert_eq!(model.named_tensors(), t.model.named_tensors());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ck = fresh().checkpoint(&ProviderSpec::Stub { dim: 16, seed: 1 });
    let bytes = ck.to_bytes().unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    for bad in [
        &bytes[..bytes.len() - 1],
        &flipped[..],
        &bytes[..10],
        b"not a checkpoint",
    ] {
        assert!(matches!(
            Checkpoint::from_bytes(bad),
            Err(Error::Integrity(_))
        ));
    }
}

#[test]
fn resumed_training_matches_unbroken_run() {
    let data = samples();
    let mut straight = fresh();
    straight.train_epoch(&data).unwrap();
    straight.train_epoch(&data).unwrap();

    let mut first = fresh();
    first.train_epoch(&data).unwrap();
    let bytes = first
        .checkpoint(&ProviderSpec::Stub { dim: 16, seed: 1 })
        .to_bytes()
        .unwrap();
    drop(first);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = Trainer::resume(&ck, train_cfg(), SkeletonModel::canonical()).unwrap();
    assert_eq!((resumed.epoch(), resumed.step()), (1, 3));
    resumed.train_epoch(&data).unwrap();
    assert_eq!(resumed.step(), straight.step());

    for ((name, a), (_, b)) in straight
        .model
        .named_tensors()
        .iter()
        .zip(resumed.model.named_tensors().iter())
    {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(
                (x - y).abs() <= 1e-10 * x.abs().max(1e-12),
                "{name}: {x} vs {y}"
            );
        }
    }
}

#[test]
fn resume_requires_optimizer_state() {
    let ck = fresh()
        .model
        .to_checkpoint(ProviderSpec::Stub { dim: 16, seed: 1 });
    assert!(matches!(
        Trainer::resume(&ck, train_cfg(), SkeletonModel::canonical()),
        Err(Error::ConfigMismatch(_))
    ));
}

fn run_config() -> RunConfig {
    RunConfig {
        model: ModelConfig::small(1, 16, 2, 16, 60),
        provider: ProviderSpec::Stub { dim: 16, seed: 3 },
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 2,
            seed: 21,
            eval_interval: 1,
            holdout_per_class: 1,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn same_seed_gives_identical_metrics_and_checkpoint() {
    let run = run_config();
    let recs = synthesize_dataset(2, 3, 8).unwrap();
    let provider = StubProvider::new(16, 3).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = train_records(&run, &recs, &provider, a.path()).unwrap();
    let sb = train_records(&run, &recs, &provider, b.path()).unwrap();
    let ma = std::fs::read(&sa.metrics).unwrap();
    assert_eq!(ma, std::fs::read(&sb.metrics).unwrap());
    assert_eq!(
        std::fs::read(&sa.checkpoint).unwrap(),
        std::fs::read(&sb.checkpoint).unwrap()
    );
    assert_eq!((sa.train_samples, sa.holdout_samples), (4, 2));

    let kinds: Vec<String> = read_metrics(&sa.metrics)
        .unwrap()
        .into_iter()
        .map(|r| r.kind)
        .collect();
    assert_eq!(kinds, ["init", "epoch", "eval", "epoch", "eval", "final"]);

    let mut other = run.clone();
    other.train.seed = 22;
    let c = tempfile::tempdir().unwrap();
    let sc = train_records(&other, &recs, &provider, c.path()).unwrap();
    assert_ne!(ma, std::fs::read(&sc.metrics).unwrap());
}

#[test]
fn mismatched_provider_dimension_is_rejected() {
    let run = run_config();
    let recs = synthesize_dataset(2, 1, 8).unwrap();
    let provider = StubProvider::new(32, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        train_records(&run, &recs, &provider, dir.path()),
        Err(Error::ConfigMismatch(_))
    ));
}
