//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use motionalign::data::{
    build_triplets, dataset_stats, import_babel, load_dataset, read_motion_file, save_dataset,
    synthesize_dataset, write_motion_file, FAMILIES,
};
use motionalign::latent_ops::embed_classes;
use motionalign::renderer::{rasterize, Camera, RenderStyle};
use motionalign::skeleton::{MotionSequence, SkeletonModel};
use motionalign::trainer::{
    class_names, evaluate, load_model, prepare_samples, run_training, split_holdout, RunConfig,
    TrainConfig,
};
use serde::Serialize;
use serde_json::Value;

use crate::api::{
    to_body, ApiEditTerm, ApiMotionPayload, ClassifyRequest, DecodeRequest, EditRequest,
    EncodeRequest, Endpoint, GeneratedMotion, InterpolateRequest, Service, TermKind,
    TextToMotionRequest,
};

/// Bad arguments discovered after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(
    name = "motionalign",
    version,
    about = "Motion auto-encoder with a text/image aligned latent space"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset tooling.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train from a key = value config file.
    Train(TrainArgs),
    /// Reconstruction, alignment and retrieval metrics for a checkpoint.
    Eval(EvalArgs),
    /// Motion file to latent code (JSON).
    Encode(EncodeArgs),
    /// Latent code to motion file.
    Decode(DecodeArgs),
    /// Decode the text embedding of a prompt.
    #[command(name = "text2motion")]
    TextToMotion(TextArgs),
    /// Linear interpolation between two motions or latents.
    Interp(InterpArgs),
    /// Decode a weighted sum of motion, text and latent terms.
    Edit(EditArgs),
    /// Zero-shot classification against class names.
    Classify(ClassifyArgs),
    /// Write PNG frames of a motion file.
    Render(RenderArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Procedural toy dataset.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = FAMILIES.len())]
        families: usize,
        #[arg(long, default_value_t = 50)]
        per_family: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// BABEL annotations over pre-converted motion files.
    Import {
        #[arg(long)]
        annotations: PathBuf,
        /// Directory of `<babel_sid>.mclip` files.
        #[arg(long)]
        motions: PathBuf,
        /// Comma-separated action categories that define class ids.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Embedding cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> anyhow::Result<Service> {
        Service::load(&self.checkpoint, self.cache.clone())
            .with_context(|| format!("loading {}", self.checkpoint.display()))
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate on the last N windows of each class; defaults to the training hold-out.
    #[arg(long)]
    holdout_per_class: Option<usize>,
    /// Triplet seed; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    motion: PathBuf,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long = "frames", short = 'T')]
    frames: Option<usize>,
    /// Print the response JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// JSON latent: an array or an object with a `latent` array.
    #[arg(long)]
    latent: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct TextArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct InterpArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Motion file, or a `.json` latent.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    #[arg(long, default_value = "interp")]
    out_dir: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `COEF:KIND:VALUE` with KIND one of text, motion (file) or latent (JSON file).
    #[arg(long = "term", required = true, allow_hyphen_values = true)]
    terms: Vec<String>,
    #[arg(long)]
    renormalize: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    motion: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Print the response JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    render_dir: PathBuf,
    /// Render every n-th frame.
    #[arg(long, default_value_t = 1)]
    every: usize,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Allowed CORS origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Data(d) => data(d),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Encode(a) => {
            let svc = a.model.load()?;
            let req = EncodeRequest {
                motion: motion_payload(&a.motion)?,
            };
            let body = to_body(&svc.encode(&req)?);
            match a.out {
                Some(p) => {
                    fs::write(&p, &body).with_context(|| format!("writing {}", p.display()))?
                }
                None => print_body(&body)?,
            }
            Ok(())
        }
        Command::Decode(a) => {
            let svc = a.model.load()?;
            let req = DecodeRequest {
                latent: read_latent(&a.latent)?,
                frames: a.output.frames,
            };
            emit(&svc.decode(&req)?, &a.out, a.output.json)
        }
        Command::TextToMotion(a) => {
            let svc = a.model.load()?;
            let req = TextToMotionRequest {
                text: a.prompt,
                frames: a.output.frames,
            };
            emit(&svc.text_to_motion(&req)?, &a.out, a.output.json)
        }
        Command::Interp(a) => interp(a),
        Command::Edit(a) => edit(a),
        Command::Classify(a) => classify(a),
        Command::Render(a) => render(a),
        Command::Serve(a) => serve(a),
    }
}

fn print_body(body: &[u8]) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(body)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn motion_payload(path: &Path) -> anyhow::Result<ApiMotionPayload> {
    let m = read_motion_file(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ApiMotionPayload::from_motion(&m, None)?)
}

fn read_latent(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let arr = v.get("latent").cloned().unwrap_or(v);
    serde_json::from_value(arr)
        .map_err(|e| anyhow!("{}: expected a latent array: {e}", path.display()))
}

fn write_payload(p: &ApiMotionPayload, path: &Path) -> anyhow::Result<()> {
    let m: MotionSequence = p.to_motion()?;
    write_motion_file(path, &m).with_context(|| format!("writing {}", path.display()))
}

fn emit(g: &GeneratedMotion, out: &Path, json: bool) -> anyhow::Result<()> {
    write_payload(&g.motion, out)?;
    if json {
        print_body(&to_body(g))?;
    } else {
        println!("wrote {} ({} frames)", out.display(), g.motion.frames.len());
    }
    Ok(())
}

fn data(cmd: DataCommand) -> anyhow::Result<()> {
    match cmd {
        DataCommand::Synth {
            seed,
            families,
            per_family,
            out,
        } => {
            let recs = synthesize_dataset(families, per_family, seed)?;
            let manifest = save_dataset(&out, &recs)?;
            println!("wrote {} records to {}", recs.len(), manifest.display());
        }
        DataCommand::Import {
            annotations,
            motions,
            classes,
            out,
        } => {
            let text = fs::read_to_string(&annotations)
                .with_context(|| format!("reading {}", annotations.display()))?;
            let report = import_babel(&text, &motions, classes.as_deref())?;
            for (id, why) in &report.skipped {
                eprintln!("skipped {id}: {why}");
            }
            let manifest = save_dataset(&out, &report.records)?;
            println!(
                "imported {} records ({} skipped) to {}",
                report.records.len(),
                report.skipped.len(),
                manifest.display()
            );
        }
        DataCommand::Stats { data } => print_json(&dataset_stats(&load_dataset(&data)?)?)?,
    }
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut run = match &a.config {
        Some(p) => RunConfig::from_kv(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    if let Some(e) = a.epochs {
        run.train.epochs = e;
    }
    let s = run_training(&run, &a.data, &a.out)?;
    println!(
        "loss {:.6} -> {:.6} ({:.1}% lower) over {} windows",
        s.initial.total,
        s.last.total,
        100.0 * s.reduction(),
        s.train_samples
    );
    if let Some(e) = &s.eval {
        print_json(e)?;
    }
    println!("checkpoint {}", s.checkpoint.display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (model, ck) = load_model(&a.model.checkpoint)?;
    let train: Option<TrainConfig> = ck
        .extra
        .get("train")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    let seed = a.seed.or(train.as_ref().map(|t| t.seed)).unwrap_or(0);
    let holdout = a
        .holdout_per_class
        .or(train.as_ref().map(|t| t.holdout_per_class))
        .unwrap_or(0);
    let weights = train.map(|t| t.weights()).unwrap_or_default();
    let provider = ck.provider.build(a.model.cache.clone())?;
    let records = load_dataset(&a.data)?;
    let skel = SkeletonModel::canonical();
    let samples = prepare_samples(
        &build_triplets(&records, &skel, provider.as_ref(), seed)?,
        &skel,
    )?;
    let (all, held) = split_holdout(samples, holdout);
    let target = if held.is_empty() { all } else { held };
    let classes = class_names(&records);
    let emb = classes
        .as_ref()
        .map(|c| embed_classes(provider.as_ref(), c))
        .transpose()?;
    let m = evaluate(
        &model,
        &skel,
        &target,
        &weights,
        classes.as_deref().zip(emb.as_deref()),
    )?;
    print_json(&m)
}

fn endpoint(path: &Path) -> anyhow::Result<Endpoint> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(Endpoint::Latent(read_latent(path)?))
    } else {
        Ok(Endpoint::Motion(motion_payload(path)?))
    }
}

fn interp(a: InterpArgs) -> anyhow::Result<()> {
    let svc = a.model.load()?;
    let req = InterpolateRequest {
        a: endpoint(&a.a)?,
        b: endpoint(&a.b)?,
        steps: a.steps,
        frames: a.output.frames,
    };
    let resp = svc.interpolate(&req)?;
    fs::create_dir_all(&a.out_dir)?;
    for (k, s) in resp.steps.iter().enumerate() {
        write_payload(&s.motion, &a.out_dir.join(format!("interp_{k:03}.mclip")))?;
    }
    if a.output.json {
        print_body(&to_body(&resp))?;
    } else {
        println!(
            "wrote {} motions to {}",
            resp.steps.len(),
            a.out_dir.display()
        );
    }
    Ok(())
}

/// Parses `COEF:KIND:VALUE`; VALUE may itself contain colons.
fn parse_term(spec: &str) -> anyhow::Result<ApiEditTerm> {
    let mut parts = spec.splitn(3, ':');
    let (Some(c), Some(k), Some(v)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(usage(format!("term {spec:?} is not COEF:KIND:VALUE")));
    };
    let coef: f64 = c
        .trim()
        .parse()
        .map_err(|_| usage(format!("term {spec:?}: bad coefficient {c:?}")))?;
    let (kind, value) = match k.trim() {
        "text" => (TermKind::Text, Value::String(v.to_string())),
        "motion" => (
            TermKind::Motion,
            serde_json::to_value(motion_payload(Path::new(v))?)?,
        ),
        "latent" => (
            TermKind::Latent,
            serde_json::to_value(read_latent(Path::new(v))?)?,
        ),
        other => return Err(usage(format!("term {spec:?}: unknown kind {other:?}"))),
    };
    Ok(ApiEditTerm { coef, kind, value })
}

fn edit(a: EditArgs) -> anyhow::Result<()> {
    let terms = a
        .terms
        .iter()
        .map(|t| parse_term(t))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let svc = a.model.load()?;
    let req = EditRequest {
        terms,
        renormalize: a.renormalize,
        frames: a.output.frames,
    };
    emit(&svc.edit(&req)?, &a.out, a.output.json)
}

fn classify(a: ClassifyArgs) -> anyhow::Result<()> {
    let svc = a.model.load()?;
    let req = ClassifyRequest {
        motion: motion_payload(&a.motion)?,
        classes: a.classes.iter().map(|c| c.trim().to_string()).collect(),
        top_k: a.top_k,
        temperature: a.temperature,
    };
    let resp = svc.classify(&req)?;
    if a.json {
        return print_body(&to_body(&resp));
    }
    let width = resp
        .top
        .iter()
        .map(|r| r.class.len())
        .max()
        .unwrap_or(5)
        .max(5);
    println!(
        "{:<4}  {:<width$}  {:>11}  {:>8}",
        "rank", "class", "probability", "cosine"
    );
    for (rank, r) in resp.top.iter().enumerate() {
        let i = resp
            .classes
            .iter()
            .position(|c| *c == r.class)
            .expect("ranked class is listed");
        println!(
            "{:<4}  {:<width$}  {:>11.6}  {:>8.4}",
            rank + 1,
            r.class,
            r.probability,
            resp.cosines[i]
        );
    }
    Ok(())
}

fn render(a: RenderArgs) -> anyhow::Result<()> {
    if a.every == 0 {
        return Err(usage("--every must be positive"));
    }
    let m =
        read_motion_file(&a.motion).with_context(|| format!("reading {}", a.motion.display()))?;
    let skel = SkeletonModel::canonical();
    let mut camera = Camera::default();
    camera.width = a.width.unwrap_or(camera.width);
    camera.height = a.height.unwrap_or(camera.height);
    camera.validate()?;
    fs::create_dir_all(&a.render_dir)?;
    let mut n = 0;
    for (t, pose) in m.poses.iter().enumerate().step_by(a.every) {
        let img = rasterize(&skel, pose, &camera, &RenderStyle::default())?;
        img.write_png(fs::File::create(
            a.render_dir.join(format!("frame_{t:04}.png")),
        )?)?;
        n += 1;
    }
    println!("wrote {n} frames to {}", a.render_dir.display());
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let svc = Arc::new(a.model.load()?);
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|_| usage(format!("bad listen address {}:{}", a.host, a.port)))?;
    let cors = crate::server::cors(&a.cors_origins)
        .map_err(|e| usage(format!("bad --cors-origin: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::server::serve(svc, addr, cors, |bound| {
        println!("listening on http://{bound}");
    }))
}
