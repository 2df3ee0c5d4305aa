//! Mini-batch training against the combined reconstruction and alignment loss.

mod config;
mod optim;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_triplets, load_dataset, MotionRecord, Triplet};
use crate::embedding::{EmbeddingProvider, ProviderSpec, SemanticVector};
use crate::error::{Error, Result};
use crate::latent_ops::{classify_latent, embed_classes, DEFAULT_TEMPERATURE};
use crate::model::{
    alignment_term, recon_terms, Bound, Checkpoint, LossWeights, MotionAutoEncoder, RngState,
    MODEL_PREFIX,
};
use crate::skeleton::{sequence_geometry, SkeletonModel};
use crate::tensor::{Graph, Tensor, Var};
use crate::POSE_DIM;

pub use config::{RunConfig, TrainConfig};
pub use optim::{clip_global_norm, global_norm, Adam};

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const SHUFFLE_STREAM: u64 = 0x5_4855_4646;

/// A triplet with its targets laid out for batching.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub frames: usize,
    /// `T × 144` pose features.
    pub poses: Vec<f64>,
    /// `T × 3V` proxy vertices of the target.
    pub vertices: Vec<f64>,
    pub text: String,
    pub text_emb: Option<SemanticVector>,
    pub image_emb: Option<SemanticVector>,
    pub class_id: Option<u32>,
}

impl Sample {
    pub fn from_triplet(t: &Triplet, skeleton: &SkeletonModel) -> Result<Self> {
        Ok(Self {
            id: t.id.clone(),
            frames: t.motion.len(),
            poses: t.motion.features(),
            vertices: sequence_geometry(skeleton, &t.motion)?.flat_vertices(),
            text: t.text.clone(),
            text_emb: t.text_emb.clone(),
            image_emb: t.image_emb.clone(),
            class_id: t.class_id,
        })
    }
}

pub fn prepare_samples(triplets: &[Triplet], skeleton: &SkeletonModel) -> Result<Vec<Sample>> {
    triplets
        .iter()
        .map(|t| Sample::from_triplet(t, skeleton))
        .collect()
}

/// Loss values of one batch or averaged over a set of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub recon: f64,
    pub pose: f64,
    pub vertex: f64,
    pub velocity: f64,
    pub text: Option<f64>,
    pub image: Option<f64>,
}

impl LossValues {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.recon,
            self.text.unwrap_or(0.0),
            self.image.unwrap_or(0.0),
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

struct BatchGraph<'g> {
    total: Var<'g>,
    z: Var<'g>,
    values: LossValues,
    text_count: usize,
    image_count: usize,
}

fn batch_graph<'g>(
    model: &MotionAutoEncoder,
    p: &Bound<'g>,
    g: &'g Graph,
    skeleton: &SkeletonModel,
    batch: &[&Sample],
    w: &LossWeights,
) -> Result<BatchGraph<'g>> {
    let b = batch.len();
    let t = batch[0].frames;
    if batch.iter().any(|s| s.frames != t) {
        return Err(Error::input("a batch must hold sequences of one length"));
    }
    let mut poses = Vec::with_capacity(b * t * POSE_DIM);
    let mut verts = Vec::with_capacity(b * batch[0].vertices.len());
    for s in batch {
        poses.extend_from_slice(&s.poses);
        verts.extend_from_slice(&s.vertices);
    }
    let target = Tensor::new(&[b, t, POSE_DIM], poses)?;
    let target_verts = Tensor::new(&[b * t, batch[0].vertices.len() / t], verts)?;
    let z = model.encode_graph(p, g.constant(target.clone()))?;
    let out = model.decode_graph(p, z, t)?;
    let (pose, vertex, velocity) = recon_terms(skeleton, out, &target, &target_verts)?;
    let recon = pose.add(vertex)?.add(velocity)?;
    let texts: Vec<Option<&SemanticVector>> = batch.iter().map(|s| s.text_emb.as_ref()).collect();
    let images: Vec<Option<&SemanticVector>> = batch.iter().map(|s| s.image_emb.as_ref()).collect();
    let text = alignment_term(z, &texts)?;
    let image = alignment_term(z, &images)?;
    let mut total = recon;
    if let Some(tv) = text {
        total = total.add(tv.scale(w.lambda_text))?;
    }
    if let Some(iv) = image {
        total = total.add(iv.scale(w.lambda_image))?;
    }
    let item = |v: Var<'g>| v.value().item();
    let values = LossValues {
        total: item(total),
        recon: item(recon),
        pose: item(pose),
        vertex: item(vertex),
        velocity: item(velocity),
        text: text.map(item),
        image: image.map(item),
    };
    Ok(BatchGraph {
        total,
        z,
        values,
        text_count: texts.iter().flatten().count(),
        image_count: images.iter().flatten().count(),
    })
}

/// Batch losses and the gradient of the total with respect to every
/// parameter, in registration order. Gradients are skipped (empty) when the
/// loss is not finite.
pub fn loss_and_gradients(
    model: &MotionAutoEncoder,
    skeleton: &SkeletonModel,
    batch: &[&Sample],
    weights: &LossWeights,
) -> Result<(LossValues, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let g = Graph::new();
    let p = model.params().bind(&g);
    let bg = batch_graph(model, &p, &g, skeleton, batch, weights)?;
    if !bg.values.is_finite() {
        return Ok((bg.values, Vec::new()));
    }
    let mut grads = g.backward(bg.total)?;
    let list = p
        .vars()
        .iter()
        .map(|v| grads.take(*v).expect("parameters are tracked"))
        .collect();
    Ok((bg.values, list))
}

/// Accumulates per-batch values into sample-weighted means.
#[derive(Default)]
struct Averager {
    n: usize,
    total: f64,
    recon: f64,
    pose: f64,
    vertex: f64,
    velocity: f64,
    text: (f64, usize),
    image: (f64, usize),
}

impl Averager {
    fn add(&mut self, v: &LossValues, n: usize, text_n: usize, image_n: usize) {
        let w = n as f64;
        self.n += n;
        self.total += v.total * w;
        self.recon += v.recon * w;
        self.pose += v.pose * w;
        self.vertex += v.vertex * w;
        self.velocity += v.velocity * w;
        if let Some(t) = v.text {
            self.text.0 += t * text_n as f64;
            self.text.1 += text_n;
        }
        if let Some(i) = v.image {
            self.image.0 += i * image_n as f64;
            self.image.1 += image_n;
        }
    }

    fn finish(&self, w: &LossWeights) -> LossValues {
        let n = self.n.max(1) as f64;
        let text = (self.text.1 > 0).then(|| self.text.0 / self.text.1 as f64);
        let image = (self.image.1 > 0).then(|| self.image.0 / self.image.1 as f64);
        let recon = self.recon / n;
        LossValues {
            total: recon
                + w.lambda_text * text.unwrap_or(0.0)
                + w.lambda_image * image.unwrap_or(0.0),
            recon,
            pose: self.pose / n,
            vertex: self.vertex / n,
            velocity: self.velocity / n,
            text,
            image,
        }
    }
}

/// One line of the NDJSON metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `init`, `epoch`, `eval` or `final`.
    pub kind: String,
    pub epoch: u64,
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossValues,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<EvalMetrics>,
}

impl MetricsRecord {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    pub recon: f64,
    /// Mean `cos(z, text embedding)` over samples with a text target.
    pub text_cosine: Option<f64>,
    pub image_cosine: Option<f64>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
}

/// Mean losses of `samples` under the current parameters, in batches of `batch`.
pub fn dataset_losses(
    model: &MotionAutoEncoder,
    skeleton: &SkeletonModel,
    samples: &[Sample],
    weights: &LossWeights,
    batch: usize,
) -> Result<LossValues> {
    Ok(forward_all(model, skeleton, samples, weights, batch)?.0)
}

fn forward_all(
    model: &MotionAutoEncoder,
    skeleton: &SkeletonModel,
    samples: &[Sample],
    weights: &LossWeights,
    batch: usize,
) -> Result<(LossValues, Vec<Vec<f64>>)> {
    let mut avg = Averager::default();
    let mut latents = Vec::with_capacity(samples.len());
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch.max(1)) {
        let g = Graph::new();
        let p = model.params().bind_frozen(&g);
        let bg = batch_graph(model, &p, &g, skeleton, chunk, weights)?;
        avg.add(&bg.values, chunk.len(), bg.text_count, bg.image_count);
        let z = bg.z.value();
        latents.extend(z.data().chunks(model.config().d_model).map(<[f64]>::to_vec));
    }
    Ok((avg.finish(weights), latents))
}

fn mean_cosine(
    latents: &[Vec<f64>],
    targets: impl Iterator<Item = Option<SemanticVector>>,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (z, t) in latents.iter().zip(targets) {
        if let Some(t) = t {
            sum += crate::embedding::SemanticVector::new(z.clone())
                .ok()?
                .cosine(&t);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Reconstruction, alignment and zero-shot retrieval on `samples`.
///
/// Retrieval ranks `class_names` by cosine to each latent; a sample counts
/// when its `class_id` indexes `class_names`.
pub fn evaluate(
    model: &MotionAutoEncoder,
    skeleton: &SkeletonModel,
    samples: &[Sample],
    weights: &LossWeights,
    classes: Option<(&[String], &[SemanticVector])>,
) -> Result<EvalMetrics> {
    let (losses, latents) = forward_all(model, skeleton, samples, weights, 16)?;
    let text_cosine = mean_cosine(&latents, samples.iter().map(|s| s.text_emb.clone()));
    let image_cosine = mean_cosine(&latents, samples.iter().map(|s| s.image_emb.clone()));
    let (mut top1, mut top5) = (None, None);
    if let Some((names, emb)) = classes {
        let mut hits = (0usize, 0usize);
        let mut n = 0usize;
        for (z, s) in latents.iter().zip(samples) {
            let Some(c) = s.class_id.map(|c| c as usize).filter(|&c| c < names.len()) else {
                continue;
            };
            let scores = classify_latent(
                &crate::model::LatentCode::new(z.clone())?,
                names,
                emb,
                DEFAULT_TEMPERATURE,
            )?;
            let rank = scores.ranking();
            n += 1;
            hits.0 += usize::from(rank[0] == c);
            hits.1 += usize::from(rank.iter().take(5).any(|&i| i == c));
        }
        if n > 0 {
            top1 = Some(hits.0 as f64 / n as f64);
            top5 = Some(hits.1 as f64 / n as f64);
        }
    }
    Ok(EvalMetrics {
        samples: samples.len(),
        recon: losses.recon,
        text_cosine,
        image_cosine,
        top1,
        top5,
    })
}

/// Optimizer, RNG and counters around a model.
pub struct Trainer {
    pub model: MotionAutoEncoder,
    pub cfg: TrainConfig,
    skeleton: SkeletonModel,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: u64,
    step: u64,
}

impl Trainer {
    pub fn new(
        model: MotionAutoEncoder,
        cfg: TrainConfig,
        skeleton: SkeletonModel,
    ) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(
            model.params(),
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SHUFFLE_STREAM);
        Ok(Self {
            model,
            cfg,
            skeleton,
            adam,
            rng,
            epoch: 0,
            step: 0,
        })
    }

    /// Restores model, optimizer moments, RNG position and counters.
    pub fn resume(ck: &Checkpoint, cfg: TrainConfig, skeleton: SkeletonModel) -> Result<Self> {
        let model = MotionAutoEncoder::from_checkpoint(ck)?;
        let mut t = Self::new(model, cfg, skeleton)?;
        let names: Vec<String> = t.model.params().names().to_vec();
        let m = ck.group(ADAM_M);
        let v = ck.group(ADAM_V);
        if m.len() != names.len() || v.len() != names.len() {
            return Err(Error::ConfigMismatch(
                "checkpoint lacks optimizer state".into(),
            ));
        }
        let lookup = |group: &[(String, Tensor)], name: &str| -> Result<Tensor> {
            group
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::ConfigMismatch(format!("no optimizer state for {name}")))
        };
        for (i, name) in names.iter().enumerate() {
            t.adam.m[i] = lookup(&m, name)?;
            t.adam.v[i] = lookup(&v, name)?;
        }
        t.adam.step = ck
            .extra
            .get("adam_step")
            .and_then(|s| s.as_u64())
            .unwrap_or(ck.step);
        t.step = ck.step;
        t.epoch = ck.epoch;
        if let Some(r) = &ck.rng {
            t.rng = r.restore()?;
        }
        Ok(t)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn skeleton(&self) -> &SkeletonModel {
        &self.skeleton
    }

    pub fn checkpoint(&self, provider: &ProviderSpec) -> Checkpoint {
        let mut tensors = self.model.named_tensors();
        for (i, name) in self.model.params().names().iter().enumerate() {
            tensors.push((format!("{ADAM_M}{name}"), self.adam.m[i].clone()));
            tensors.push((format!("{ADAM_V}{name}"), self.adam.v[i].clone()));
        }
        Checkpoint {
            config: self.model.config().clone(),
            provider: provider.clone(),
            step: self.step,
            epoch: self.epoch,
            rng: Some(RngState::capture(&self.rng)),
            extra: serde_json::json!({ "adam_step": self.adam.step, "train": self.cfg }),
            tensors,
        }
    }

    /// One optimizer step on `batch`. Returns the pre-update losses and the
    /// gradient norm before clipping.
    pub fn step_batch(&mut self, batch: &[&Sample]) -> Result<(LossValues, f64)> {
        let weights = self.cfg.weights();
        let (values, mut grads) = loss_and_gradients(&self.model, &self.skeleton, batch, &weights)?;
        if !values.is_finite() {
            return Err(self.diverged(batch, &values, "non-finite loss"));
        }
        let norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        if !norm.is_finite() {
            return Err(self.diverged(batch, &values, "non-finite gradient"));
        }
        self.adam.update(self.model.params_mut(), &grads)?;
        self.step += 1;
        Ok((values, norm))
    }

    fn diverged(&self, batch: &[&Sample], v: &LossValues, what: &str) -> Error {
        let snapshot = serde_json::json!({
            "reason": what,
            "epoch": self.epoch,
            "step": self.step,
            "batch": batch.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            "losses": v,
        });
        Error::Diverged {
            step: self.step,
            detail: snapshot.to_string(),
        }
    }

    /// Shuffles `samples` and makes one pass; returns the sample-weighted mean
    /// of the batch losses and the largest pre-clip gradient norm.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<(LossValues, f64)> {
        if samples.is_empty() {
            return Err(Error::input("no training samples"));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        let weights = self.cfg.weights();
        let mut avg = Averager::default();
        let mut max_norm: f64 = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (v, norm) = self.step_batch(&batch)?;
            let tn = batch.iter().filter(|s| s.text_emb.is_some()).count();
            let im = batch.iter().filter(|s| s.image_emb.is_some()).count();
            avg.add(&v, batch.len(), tn, im);
            max_norm = max_norm.max(norm);
        }
        self.epoch += 1;
        Ok((avg.finish(&weights), max_norm))
    }
}

/// Class names indexed by class id, taken from each class's first record label.
pub fn class_names(records: &[MotionRecord]) -> Option<Vec<String>> {
    let mut map = BTreeMap::new();
    for r in records {
        if let (Some(c), Some(l)) = (r.class_id, r.labels.first()) {
            map.entry(c).or_insert_with(|| l.text.clone());
        }
    }
    let names: Vec<String> = map.values().cloned().collect();
    let contiguous = map.keys().enumerate().all(|(i, &c)| i as u32 == c);
    (contiguous && names.len() >= 2).then_some(names)
}

/// Splits off the last `per_class` samples of every class for evaluation.
pub fn split_holdout(samples: Vec<Sample>, per_class: usize) -> (Vec<Sample>, Vec<Sample>) {
    if per_class == 0 {
        return (samples, Vec::new());
    }
    let mut seen: BTreeMap<Option<u32>, usize> = BTreeMap::new();
    let mut keep = vec![true; samples.len()];
    for (i, s) in samples.iter().enumerate().rev() {
        if s.class_id.is_none() {
            continue;
        }
        let n = seen.entry(s.class_id).or_default();
        if *n < per_class {
            *n += 1;
            keep[i] = false;
        }
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (s, k) in samples.into_iter().zip(keep) {
        if k {
            train.push(s);
        } else {
            held.push(s);
        }
    }
    (train, held)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial: LossValues,
    pub last: LossValues,
    pub eval: Option<EvalMetrics>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub train_samples: usize,
    pub holdout_samples: usize,
}

impl TrainSummary {
    /// Relative drop of the total loss from initialization.
    pub fn reduction(&self) -> f64 {
        1.0 - self.last.total / self.initial.total
    }
}

/// Checkpoint file written by [`run_training`].
pub const CHECKPOINT_FILE: &str = "model.ckpt";
/// Metrics log written by [`run_training`].
pub const METRICS_FILE: &str = "metrics.ndjson";

/// Data loading, triplet building, training, evaluation and persistence.
///
/// Writes `metrics.ndjson`, `model.ckpt` (at every evaluation interval and at
/// the end), and on divergence `divergence.json`.
pub fn run_training(run: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainSummary> {
    run.validate()?;
    let records = load_dataset(data_dir)?;
    let provider = run.provider.build(Some(out_dir.join("embedding-cache")))?;
    train_records(run, &records, provider.as_ref(), out_dir)
}

pub fn train_records(
    run: &RunConfig,
    records: &[MotionRecord],
    provider: &dyn EmbeddingProvider,
    out_dir: &Path,
) -> Result<TrainSummary> {
    run.validate()?;
    if provider.dimension() != run.model.d_model {
        return Err(Error::ConfigMismatch(format!(
            "provider dimension {} differs from d_model {}",
            provider.dimension(),
            run.model.d_model
        )));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.kv"), run.to_kv())?;
    let skeleton = SkeletonModel::canonical();
    let triplets = build_triplets(records, &skeleton, provider, run.train.seed)?;
    if triplets.is_empty() {
        return Err(Error::input("the dataset yields no training windows"));
    }
    let samples = prepare_samples(&triplets, &skeleton)?;
    let (train, held) = split_holdout(samples, run.train.holdout_per_class);
    if train.is_empty() {
        return Err(Error::input("hold-out leaves no training samples"));
    }
    let classes = class_names(records);
    let class_emb = classes
        .as_ref()
        .map(|c| embed_classes(provider, c))
        .transpose()?;
    let class_ref = classes.as_deref().zip(class_emb.as_deref());

    let model = MotionAutoEncoder::new(run.model.clone(), run.train.seed)?;
    let mut trainer = Trainer::new(model, run.train.clone(), skeleton.clone())?;
    let weights = run.train.weights();
    let metrics_path = out_dir.join(METRICS_FILE);
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    let mut log = fs::File::create(&metrics_path)?;
    let bs = run.train.batch_size;

    let initial = dataset_losses(&trainer.model, &skeleton, &train, &weights, bs)?;
    write_record(&mut log, "init", &trainer, initial, None, None)?;
    let mut eval = None;
    for e in 1..=run.train.epochs {
        let (losses, norm) = match trainer.train_epoch(&train) {
            Ok(v) => v,
            Err(err @ Error::Diverged { .. }) => {
                if let Error::Diverged { detail, .. } = &err {
                    fs::write(out_dir.join("divergence.json"), detail)?;
                }
                return Err(err);
            }
            Err(err) => return Err(err),
        };
        write_record(&mut log, "epoch", &trainer, losses, Some(norm), None)?;
        let due = run.train.eval_interval > 0 && e % run.train.eval_interval == 0;
        if due || e == run.train.epochs {
            if !held.is_empty() {
                let m = evaluate(&trainer.model, &skeleton, &held, &weights, class_ref)?;
                write_record(&mut log, "eval", &trainer, losses, None, Some(m.clone()))?;
                eval = Some(m);
            }
            trainer.checkpoint(&run.provider).save(&ck_path)?;
        }
    }
    let last = dataset_losses(&trainer.model, &skeleton, &train, &weights, bs)?;
    write_record(&mut log, "final", &trainer, last, None, None)?;
    log.flush()?;
    Ok(TrainSummary {
        initial,
        last,
        eval,
        checkpoint: ck_path,
        metrics: metrics_path,
        train_samples: train.len(),
        holdout_samples: held.len(),
    })
}

fn write_record(
    log: &mut fs::File,
    kind: &str,
    t: &Trainer,
    losses: LossValues,
    grad_norm: Option<f64>,
    eval: Option<EvalMetrics>,
) -> Result<()> {
    let rec = MetricsRecord {
        kind: kind.to_string(),
        epoch: t.epoch(),
        step: t.step(),
        losses,
        grad_norm,
        eval,
    };
    let line = rec.to_line()?;
    writeln!(log, "{line}")?;
    log::info!("{line}");
    Ok(())
}

/// Parses a metrics log.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Loads only the model half of a checkpoint.
pub fn load_model(path: impl AsRef<Path>) -> Result<(MotionAutoEncoder, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let model = MotionAutoEncoder::with_params(ck.config.clone(), &ck.group(MODEL_PREFIX))?;
    Ok((model, ck))
}
