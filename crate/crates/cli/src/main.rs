use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kinsynth::compositor::{exchange_components, ExchangeOptions};
use kinsynth::data::toy::generate_toy_dataset;
use kinsynth::exec::Exec;
use kinsynth::face_geometry::{component_boxes, parse_control_vector, LandmarkSet};
use kinsynth::image_io::{load_image, save_png};
use kinsynth::inference::{parse_components, synthesize_tree, GenerationTree, ParentFace, SynthesisControls, SynthesisRequest, Synthesizer};
use kinsynth::networks::{AgeStage, Gender};
use kinsynth::trainer::{parse_ablation, Trainer, TrainConfig};
use kinsynth::AlignedFace;

#[derive(Parser)]
#[command(name = "kinsynth", version, about = "Controllable descendant-face synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exchange facial components between two parent faces.
    Composite(CompositeArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train from a run config (.toml or .json).
    Train(TrainArgs),
    /// Synthesize one descendant face.
    Synthesize(SynthesizeArgs),
    /// Synthesize a multi-generation tree.
    Tree(TreeArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct CompositeArgs {
    #[arg(long)]
    male: PathBuf,
    #[arg(long)]
    female: PathBuf,
    #[arg(long)]
    landmarks_male: Option<PathBuf>,
    #[arg(long)]
    landmarks_female: Option<PathBuf>,
    /// Five bits, one per component: left eye/brow, right eye/brow, nose,
    /// mouth, profile. A set bit swaps that component.
    #[arg(long)]
    vector: String,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long)]
    no_color_correct: bool,
    /// Output for the male-side exchange face.
    #[arg(long)]
    out: PathBuf,
    /// Output for the female-side exchange face (default: `<out>.female.png`).
    #[arg(long)]
    out_female: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Render a procedural toy dataset with manifest and landmarks.
    GenToy {
        #[arg(long, default_value_t = 512)]
        subjects: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated term groups to disable: AD, PI, AG, PE.
    #[arg(long)]
    ablation: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    male: PathBuf,
    #[arg(long)]
    female: PathBuf,
    #[arg(long)]
    landmarks_male: Option<PathBuf>,
    #[arg(long)]
    landmarks_female: Option<PathBuf>,
    #[arg(long)]
    vector: String,
    #[arg(long, default_value = "A")]
    age: AgeStage,
    #[arg(long, default_value = "M")]
    gender: Gender,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_scale: f64,
    /// Components receiving latent noise, e.g. `1,2`; empty means all.
    #[arg(long, default_value = "")]
    noise_components: String,
    #[arg(long)]
    decoder_noise: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Tree JSON; face images are paths relative to this file.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn exec() -> Exec {
    if cfg!(feature = "parallel") {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

fn parent(image: &Path, landmarks: Option<&Path>) -> Result<ParentFace> {
    let pixels = load_image(image).with_context(|| format!("reading {}", image.display()))?;
    let landmarks = landmarks
        .map(|p| LandmarkSet::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    Ok(ParentFace { pixels, landmarks })
}

fn composite(a: CompositeArgs) -> Result<()> {
    let v = parse_control_vector(&a.vector)?;
    let male = parent(&a.male, a.landmarks_male.as_deref())?.align(a.size, "male")?;
    let female = parent(&a.female, a.landmarks_female.as_deref())?.align(a.size, "female")?;
    let layout = component_boxes(a.size)?;
    let opts = ExchangeOptions {
        color_correct: !a.no_color_correct,
        ..Default::default()
    };
    let (hat_m, hat_f) = exchange_components(&male, &female, &layout, &v, &opts)?;
    let out_female = a.out_female.unwrap_or_else(|| a.out.with_extension("female.png"));
    save_png(&hat_m, &a.out)?;
    save_png(&hat_f, &out_female)?;
    println!("{}\n{}", a.out.display(), out_female.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(flags) = &a.ablation {
        cfg.ablation = parse_ablation(flags)?;
    }
    cfg.parallel = cfg.parallel && cfg!(feature = "parallel");
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(cfg.clone(), ckpt)?,
        None => Trainer::new(cfg.clone())?,
    };
    let metrics = trainer.open_metrics(a.resume.is_some())?;
    log::info!(
        "{} training faces, {} held out; metrics at {}",
        trainer.train_records().len(),
        trainer.test_records().len(),
        metrics.display()
    );
    let summary = trainer.run()?;
    if let Some((age, gender)) = summary.classifier_accuracy {
        println!("classifier held-out accuracy: age {age:.3}, gender {gender:.3}");
    }
    for c in &summary.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let synth = Synthesizer::load(&a.ckpt)?;
    let req = SynthesisRequest {
        male: parent(&a.male, a.landmarks_male.as_deref())?,
        female: parent(&a.female, a.landmarks_female.as_deref())?,
        controls: SynthesisControls {
            vector: parse_control_vector(&a.vector)?,
            age_stage: a.age,
            gender: a.gender,
            seed: a.seed,
            noise_scale: a.noise_scale,
            noise_components: parse_components(&a.noise_components)?,
            decoder_noise: a.decoder_noise,
        },
    };
    let face = synth.synthesize(&req)?;
    save_png(&face, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn tree(a: TreeArgs) -> Result<()> {
    let synth = Synthesizer::load(&a.ckpt)?;
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let spec = GenerationTree::from_json(&text)?;
    let base = a.spec.parent().unwrap_or(Path::new(".")).to_path_buf();
    let faces: BTreeMap<String, AlignedFace> = synthesize_tree(&spec, &synth, |f| load_image(&base.join(&f.image)))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (id, face) in &faces {
        let path = a.out.join(format!("{id}.png"));
        save_png(face, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Composite(a) => composite(a),
        Command::Dataset(DatasetCommand::GenToy { subjects, size, seed, out }) => {
            if subjects < 2 {
                bail!("--subjects must be at least 2 so both genders appear");
            }
            let manifest = generate_toy_dataset(&out, subjects, size, seed, exec())?;
            println!("{} faces written to {}", manifest.entries.len(), out.display());
            Ok(())
        }
        Command::Train(a) => train(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Tree(a) => tree(a),
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(kinsynth_service::serve(&a.addr, a.ckpt))?;
            Ok(())
        }
    }
}
