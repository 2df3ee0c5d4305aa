//! Trains the six-family toy problem and reports loss and zero-shot retrieval.
//!
//! `cargo run --release -p motionalign --example toy -- [epochs] [lr] [batch] [ff]`

use std::time::Instant;

use motionalign::data::{build_triplets, synthesize_dataset, FAMILIES};
use motionalign::embedding::{EmbeddingProvider, StubProvider};
use motionalign::latent_ops::embed_classes;
use motionalign::model::{ModelConfig, MotionAutoEncoder};
use motionalign::skeleton::SkeletonModel;
use motionalign::trainer::{
    dataset_losses, evaluate, prepare_samples, split_holdout, TrainConfig, Trainer,
};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> motionalign::Result<()> {
    let epochs: usize = arg(1, 20);
    let lr: f64 = arg(2, 5e-4);
    let batch: usize = arg(3, 10);
    let ff: usize = arg(4, 512);
    let d = 512;
    let skel = SkeletonModel::canonical();
    let provider = StubProvider::new(d, 7)?;
    let records = synthesize_dataset(6, 50, 11)?;
    let triplets = build_triplets(&records, &skel, &provider, 3)?;
    let (train, held) = split_holdout(prepare_samples(&triplets, &skel)?, 10);
    let names: Vec<String> = FAMILIES.iter().map(|f| f.name().to_string()).collect();
    let emb = embed_classes(&provider as &dyn EmbeddingProvider, &names)?;
    let model = MotionAutoEncoder::new(ModelConfig::small(2, d, 8, ff, 60), 1)?;
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        epochs,
        seed: 5,
        ..TrainConfig::default()
    };
    let w = cfg.weights();
    let mut t = Trainer::new(model, cfg, skel.clone())?;
    let start = Instant::now();
    let init = dataset_losses(&t.model, &skel, &train, &w, 16)?;
    let ev = evaluate(&t.model, &skel, &held, &w, Some((&names, &emb)))?;
    println!(
        "init {init:?}\n     {ev:?}  {:.1}s",
        start.elapsed().as_secs_f64()
    );
    for e in 0..epochs {
        let (l, n) = t.train_epoch(&train)?;
        println!(
            "epoch {e} total {:.5} recon {:.5} text {:?} image {:?} norm {n:.3} {:.1}s",
            l.total,
            l.recon,
            l.text,
            l.image,
            start.elapsed().as_secs_f64()
        );
        if e % 5 == 4 || e + 1 == epochs {
            let ev = evaluate(&t.model, &skel, &held, &w, Some((&names, &emb)))?;
            println!("     {ev:?}");
        }
    }
    let fin = dataset_losses(&t.model, &skel, &train, &w, 16)?;
    println!("final {fin:?} drop {:.4}", 1.0 - fin.total / init.total);
    Ok(())
}
