use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nalgebra::Vector3;

use humotok::commands::{bench, roundtrip};
use humotok::container::{load_motion, save_motion, MOTION_FORMAT_VERSION};
use humotok::curation::{self, FilterPolicy};
use humotok::features::{extract_features, invert_features, joint_tracks, MotionSequence, HUMO263_V1, RAW_LAYOUT};
use humotok::longmotion::{self, ConcatPlan};
use humotok::metrics::{self, EmbeddingPair};
use humotok::pose::{read_pose_lines, write_pose_lines, PoseFrame, POSE_FORMAT_VERSION};
use humotok::prq::{self, CodebookSet, PrqConfig, CODEBOOK_FORMAT_VERSION};
use humotok::tokens::{self, StreamDecoder, StreamStatus, TokenOrder, TokenStream, VocabMap, TOKEN_FORMAT_VERSION};
use humotok::{Error, PartitionSpec, Result, Skeleton};

const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "humotok", about = "Part-aware residual motion tokenizer")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pose JSON lines to a humo263.v1 motion file.
    Extract(ExtractArgs),
    /// humo263.v1 motion file to pose JSON lines.
    Invert(InvertArgs),
    /// Train a codebook on motion files.
    #[command(name = "train-codebook", alias = "train")]
    Train(TrainArgs),
    /// Motion file to a token stream.
    #[command(alias = "tokenize")]
    Encode(EncodeArgs),
    /// Token stream to a motion file.
    #[command(alias = "detokenize")]
    Decode(DecodeArgs),
    /// Stitch motion files into one long sequence.
    Concat(ConcatArgs),
    /// Occlusion and length gates over keypoint records.
    Filter(FilterArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Streaming detokenizer throughput.
    Bench(BenchArgs),
    /// Encode, decode with every layer prefix and report errors.
    Roundtrip(RoundtripArgs),
}

#[derive(Args)]
struct ModelConfig {
    /// Tokenizer configuration (TOML).
    #[arg(long, env = "HUMOTOK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct SkeletonArg {
    /// Skeleton definition (TOML); defaults to the bundled 22-joint body.
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    poses: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    /// Foot speed below which a contact is set (m/frame).
    #[arg(long)]
    contact_threshold: Option<f64>,
    #[command(flatten)]
    skeleton: SkeletonArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    model: ModelConfig,
    /// Part grouping (TOML); defaults to the bundled five parts.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    codebook_size: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// frame_by_frame or layer_by_layer.
    #[arg(long, default_value = "frame_by_frame")]
    ordering: TokenOrder,
    /// First token id of the motion vocabulary.
    #[arg(long, default_value_t = 0)]
    base_offset: u32,
    /// Write the JSON-lines debug form instead of the binary stream.
    #[arg(long)]
    jsonl: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Code layers to sum; defaults to all.
    #[arg(long)]
    layers_used: Option<usize>,
    /// Decode token by token with the streaming decoder.
    #[arg(long)]
    stream: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConcatArgs {
    #[arg(long, required = true, num_args = 2..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = longmotion::DEFAULT_TRANSITION_FRAMES)]
    transition_frames: usize,
    /// Neutral pose (TOML); defaults to the bundled standing pose.
    #[arg(long)]
    neutral: Option<PathBuf>,
    /// Externally generated bridge motions, one per junction, used instead
    /// of interpolation.
    #[arg(long, num_args = 1..)]
    bridges: Vec<PathBuf>,
    #[command(flatten)]
    skeleton: SkeletonArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    keypoints: PathBuf,
    /// Thresholds (TOML); missing keys take defaults.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Report path (JSON); stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Mean per-joint position error (mm) between two motion files.
    Mpjpe {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        skeleton: SkeletonArg,
    },
    /// Fréchet distance between the row sets of two feature files.
    Fid {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// R-precision of paired motion/text embedding files.
    Rprec {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = metrics::DEFAULT_POOL_SIZE)]
        pool: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Mean distance of paired motion/text embeddings.
    Mmdist {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        text: PathBuf,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Codebook file; an untrained model from --config when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    config: ModelConfig,
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Latent steps per synthetic stream.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Derive FPS from this token rate instead of the measured one.
    #[arg(long)]
    token_rate: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RoundtripArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    skeleton: SkeletonArg,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn version_text() -> String {
    format!(
        "{} (motion HUMO v{MOTION_FORMAT_VERSION}, codebook PRQC v{CODEBOOK_FORMAT_VERSION}, tokens HTOK v{TOKEN_FORMAT_VERSION}, \
         features {HUMO263_V1}, pose v{POSE_FORMAT_VERSION}, reports schema v{})",
        env!("CARGO_PKG_VERSION"),
        humotok::commands::REPORT_SCHEMA_VERSION
    )
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} is not a readable file", path.display()),
        )))
    }
}

fn require_out(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        ))),
        _ => Ok(()),
    }
}

fn skeleton(arg: &SkeletonArg) -> Result<Skeleton> {
    match &arg.skeleton {
        Some(p) => {
            require_file(p)?;
            Skeleton::load(p)
        }
        None => Ok(Skeleton::smpl22()),
    }
}

fn prq_config(cfg: &ModelConfig) -> Result<PrqConfig> {
    match &cfg.config {
        Some(p) => {
            require_file(p)?;
            PrqConfig::load(p)
        }
        None => Ok(PrqConfig::default()),
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_model(path: &Path) -> Result<CodebookSet> {
    require_file(path)?;
    prq::load_codebook(path)
}

fn load_token_file(path: &Path) -> Result<TokenStream> {
    require_file(path)?;
    let mut reader = BufReader::new(File::open(path)?);
    let head = reader.fill_buf()?;
    if head.starts_with(b"HTOK") {
        tokens::read_tokens(&mut reader)
    } else {
        tokens::read_tokens_jsonl(reader)
    }
}

fn rows(m: &MotionSequence) -> Vec<Vec<f64>> {
    m.rows().map(<[f64]>::to_vec).collect()
}

/// Joint positions of a humo263.v1 file (via pose reconstruction) or of a
/// raw file holding `joints x 3` values per frame.
fn positions(m: &MotionSequence, skel: &Skeleton) -> Result<Vec<Vec<Vector3<f64>>>> {
    if m.layout() == HUMO263_V1 {
        return joint_tracks(&invert_features(m, skel)?, skel);
    }
    if m.layout() != RAW_LAYOUT || !m.dim().is_multiple_of(3) {
        return Err(Error::UnsupportedLayout(format!(
            "'{}' with {} values per frame is not a position layout",
            m.layout(),
            m.dim()
        )));
    }
    Ok(m.rows()
        .map(|r| r.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
        .collect())
}

fn embedding_pairs(motion: &Path, text: &Path) -> Result<Vec<EmbeddingPair>> {
    require_file(motion)?;
    require_file(text)?;
    let (m, t) = (load_motion(motion)?, load_motion(text)?);
    if m.frames() != t.frames() {
        return Err(Error::InvalidInput(format!(
            "{} motion embeddings but {} text embeddings",
            m.frames(),
            t.frames()
        )));
    }
    Ok(m.rows()
        .zip(t.rows())
        .map(|(a, b)| EmbeddingPair {
            motion: a.to_vec(),
            text: b.to_vec(),
        })
        .collect())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract(a) => {
            require_file(&a.poses)?;
            require_out(&a.out)?;
            let skel = skeleton(&a.skeleton)?;
            let poses = read_pose_lines(BufReader::new(File::open(&a.poses)?))?;
            let motion = extract_features(&poses, &skel, a.fps, a.contact_threshold)?;
            save_motion(&a.out, &motion)
        }
        Command::Invert(a) => {
            require_file(&a.input)?;
            require_out(&a.out)?;
            let skel = skeleton(&a.skeleton)?;
            let poses = invert_features(&load_motion(&a.input)?, &skel)?;
            let mut w = BufWriter::new(File::create(&a.out)?);
            write_pose_lines(&mut w, &poses)?;
            w.flush()?;
            Ok(())
        }
        Command::Train(a) => {
            for p in &a.inputs {
                require_file(p)?;
            }
            require_out(&a.out)?;
            let mut cfg = prq_config(&a.model)?;
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = a.codebook_size {
                cfg.codebook_size = v;
            }
            if let Some(v) = a.layers {
                cfg.layers = v;
            }
            if let Some(v) = a.latent_dim {
                cfg.latent_dim = v;
            }
            if let Some(v) = a.beta {
                cfg.beta = v;
            }
            cfg.validate()?;
            let partition = match &a.partition {
                Some(p) => {
                    require_file(p)?;
                    PartitionSpec::load(p, &Skeleton::smpl22())?
                }
                None => PartitionSpec::body_parts(),
            };
            let corpus = a.inputs.iter().map(load_motion).collect::<Result<Vec<_>>>()?;
            let (model, report) = prq::train(&corpus, &cfg, partition, a.model.seed)?;
            prq::save_codebook(&a.out, &model)?;
            if let Some(r) = &a.report {
                write_text(Some(r), &to_json(&report)?)?;
            }
            Ok(())
        }
        Command::Encode(a) => {
            require_file(&a.input)?;
            require_out(&a.out)?;
            let model = load_model(&a.model)?;
            let (_, grid) = model.encode(&load_motion(&a.input)?)?;
            let cfg = model.config();
            let vocab = VocabMap::new(a.base_offset, cfg.layers, cfg.codebook_size)?;
            let stream = tokens::serialize(&grid, a.ordering, &vocab)?;
            if a.jsonl {
                let mut w = BufWriter::new(File::create(&a.out)?);
                tokens::write_tokens_jsonl(&mut w, &stream)?;
                w.flush()?;
                Ok(())
            } else {
                tokens::save_tokens(&a.out, &stream)
            }
        }
        Command::Decode(a) => {
            require_out(&a.out)?;
            let model = load_model(&a.model)?;
            let stream = load_token_file(&a.input)?;
            let layers_used = a.layers_used.unwrap_or(model.config().layers);
            let motion = if a.stream {
                let mut dec = StreamDecoder::new(&model, stream.header.clone(), layers_used)?;
                let mut frames = Vec::new();
                for &id in &stream.tokens {
                    frames.extend(dec.push(id)?);
                }
                if let StreamStatus::EndOfInput { frames: n, pending } = dec.finish() {
                    return Err(Error::CorruptStream {
                        position: dec.tokens_consumed(),
                        reason: format!("stream ended after {n} frames with {pending} codes pending"),
                    });
                }
                MotionSequence::from_rows(&frames, stream.header.fps, HUMO263_V1)?
            } else {
                model.decode(&tokens::deserialize(&stream)?, layers_used)?
            };
            save_motion(&a.out, &motion)
        }
        Command::Concat(a) => {
            for p in a.inputs.iter().chain(&a.bridges) {
                require_file(p)?;
            }
            require_out(&a.out)?;
            let skel = skeleton(&a.skeleton)?;
            let inputs = a.inputs.iter().map(load_motion).collect::<Result<Vec<_>>>()?;
            let out = if a.bridges.is_empty() {
                let neutral = match &a.neutral {
                    Some(p) => {
                        require_file(p)?;
                        PoseFrame::load(p)?
                    }
                    None => PoseFrame::neutral(),
                };
                let plan = ConcatPlan::new(a.transition_frames, neutral)?;
                longmotion::concat(&inputs, &plan, &skel)?
            } else {
                let bridges = a.bridges.iter().map(load_motion).collect::<Result<Vec<_>>>()?;
                longmotion::concat_with_bridges(&inputs, &bridges, &skel)?
            };
            save_motion(&a.out, &out)
        }
        Command::Filter(a) => {
            require_file(&a.manifest)?;
            require_file(&a.keypoints)?;
            if let Some(r) = &a.report {
                require_out(r)?;
            }
            let policy = match &a.policy {
                Some(p) => {
                    require_file(p)?;
                    FilterPolicy::load(p)?
                }
                None => FilterPolicy::default(),
            };
            let manifest = curation::read_manifest(BufReader::new(File::open(&a.manifest)?))?;
            let records = curation::read_keypoints(BufReader::new(File::open(&a.keypoints)?))?;
            let report = curation::run_pipeline(&manifest, &records, &policy)?;
            write_text(a.report.as_deref(), &report.to_json()?)
        }
        Command::Eval(e) => {
            let value = match e {
                EvalCommand::Mpjpe { pred, gt, skeleton: s } => {
                    require_file(&pred)?;
                    require_file(&gt)?;
                    let skel = skeleton(&s)?;
                    let p = positions(&load_motion(&pred)?, &skel)?;
                    let g = positions(&load_motion(&gt)?, &skel)?;
                    serde_json::json!({ "metric": "mpjpe_mm", "value": metrics::mpjpe(&p, &g)? })
                }
                EvalCommand::Fid { a, b } => {
                    require_file(&a)?;
                    require_file(&b)?;
                    let v = metrics::frechet_distance(&rows(&load_motion(&a)?), &rows(&load_motion(&b)?))?;
                    serde_json::json!({ "metric": "fid", "value": v })
                }
                EvalCommand::Rprec { motion, text, k, pool, seed } => {
                    let pairs = embedding_pairs(&motion, &text)?;
                    let v = metrics::r_precision(&pairs, k, pool, seed)?;
                    serde_json::json!({ "metric": format!("r_precision@{k}"), "pool_size": pool, "seed": seed, "value": v })
                }
                EvalCommand::Mmdist { motion, text } => {
                    let v = metrics::mm_dist(&embedding_pairs(&motion, &text)?)?;
                    serde_json::json!({ "metric": "mm_dist", "value": v })
                }
            };
            let mut out = serde_json::to_string(&value)?;
            out.push('\n');
            write_text(None, &out)
        }
        Command::Bench(a) => {
            if let Some(r) = &a.report {
                require_out(r)?;
            }
            let model = match &a.model {
                Some(p) => load_model(p)?,
                None => CodebookSet::untrained(&prq_config(&a.config)?, PartitionSpec::body_parts(), a.config.seed)?,
            };
            let report = bench(&model, a.duration, a.steps, a.token_rate, a.config.seed)?;
            write_text(a.report.as_deref(), &to_json(&report)?)
        }
        Command::Roundtrip(a) => {
            require_file(&a.input)?;
            if let Some(r) = &a.report {
                require_out(r)?;
            }
            let model = load_model(&a.model)?;
            let report = roundtrip(&load_motion(&a.input)?, &model, &skeleton(&a.skeleton)?)?;
            write_text(a.report.as_deref(), &report.to_json()?)
        }
    }
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("humotok: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

