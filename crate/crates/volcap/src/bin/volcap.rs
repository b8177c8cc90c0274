//! Command-line pipeline: synthesize capture data, build and upscale
//! hulls, train and run the autoencoder and the temporal smoother, and
//! evaluate results.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use volcap::eval::{per_joint_error, voxel_mse_report, JointSubset};
use volcap::grid::{Bbox, VoxelGrid};
use volcap::hull::{build_pvh, FusionMode};
use volcap::io::{
    read_autoencoder_checkpoint, read_calibration, read_matte, read_skeletons,
    read_smoother_checkpoint, read_volume, write_autoencoder_checkpoint, write_calibration,
    write_matte, write_skeletons, write_smoother_checkpoint, write_volume, IoError,
    SkeletonStream,
};
use volcap::lstm::{build_smoother, train_smoother, SmootherConfig};
use volcap::network::{
    build_network, denormalize_joints, normalize_joints, pretrain_encoder, train, Augmentation,
    NetError, NetworkConfig,
};
use volcap::resample::tricubic_upsample;
use volcap::synth::{generate_dataset, BodyModel, MotionSpec, RigSpec, SynthError};

#[derive(Parser, Debug)]
#[command(
    name = "volcap",
    version,
    about = "Volumetric human capture: probabilistic visual hulls, joint upscaling and pose regression, temporal smoothing"
)]
struct Cli {
    /// Cap internal parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force single-threaded reductions for bitwise reproducibility.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Print progress information.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Print the resolved run configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic multi-view capture dataset.
    Synth(SynthArgs),
    /// Build a probabilistic visual hull from calibrated mattes.
    Pvh(PvhArgs),
    /// Tricubic-upscale a volume file.
    Upscale(UpscaleArgs),
    /// Train the dual-loss autoencoder on a dataset directory.
    Train(TrainArgs),
    /// Pretrain the encoder as a pose regressor.
    Pretrain(PretrainArgs),
    /// Run inference: coarse hull in, skeleton and refined hull out.
    Infer(InferArgs),
    /// Apply a trained temporal smoother to a skeleton stream.
    Smooth(SmoothArgs),
    /// Train the temporal smoother from skeleton streams.
    TrainSmoother(TrainSmootherArgs),
    /// Accuracy reports.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct SynthArgs {
    /// Body model JSON; built-in 17-joint humanoid when omitted.
    #[arg(long)]
    body: Option<PathBuf>,
    /// Motion spec JSON; built-in walk cycle when omitted.
    #[arg(long)]
    motion: Option<PathBuf>,
    /// Rig spec JSON; built-in 4-camera ring when omitted.
    #[arg(long)]
    rig: Option<PathBuf>,
    /// Number of frames (overrides the motion spec).
    #[arg(long)]
    frames: Option<usize>,
    /// Upscale factor the dataset targets (1, 2, or 4).
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Occupancy fusion rule.
    #[arg(long, default_value = "product", value_parser = parse_fusion)]
    mode: FusionMode,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-frame matte PNGs.
    #[arg(long)]
    write_mattes: bool,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct PvhArgs {
    /// Calibration JSON.
    #[arg(long)]
    calib: PathBuf,
    /// Matte image per camera, in calibration order (repeatable).
    #[arg(long = "matte", required = true)]
    mattes: Vec<PathBuf>,
    /// Capture box as six comma-separated numbers: minx,miny,minz,maxx,maxy,maxz.
    #[arg(long, value_parser = parse_bbox)]
    bbox: BboxArg,
    /// Grid resolution per axis.
    #[arg(long, default_value_t = 32)]
    res: usize,
    #[arg(long, default_value = "product", value_parser = parse_fusion)]
    mode: FusionMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct UpscaleArgs {
    #[arg(long)]
    input: PathBuf,
    /// Upscale factor: 1, 2, or 4.
    #[arg(long)]
    factor: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct TrainArgs {
    /// Network config JSON; defaults derived from the dataset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint to initialize from (e.g. a pretrained encoder).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Disable rotation augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Cap conv/deconv channels for desk-scale runs.
    #[arg(long)]
    max_channels: Option<usize>,
    /// Width of the two leading fully-connected layers.
    #[arg(long)]
    fc_width: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    joints: Option<usize>,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_channels: Option<usize>,
    #[arg(long)]
    fc_width: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    joints: Option<usize>,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Coarse input volume (32^3).
    #[arg(long)]
    volume: PathBuf,
    /// Expected upscale factor; must match the checkpoint.
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    out_skeleton: PathBuf,
    #[arg(long)]
    out_volume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct SmoothArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct TrainSmootherArgs {
    /// Ground-truth skeleton stream(s) (repeatable).
    #[arg(long = "clean", required = true)]
    clean: Vec<PathBuf>,
    /// Matching noisy stream(s); when omitted, noise is synthesized.
    #[arg(long = "noisy")]
    noisy: Vec<PathBuf>,
    /// Std-dev (mm) of synthetic joint noise when no noisy streams given.
    #[arg(long, default_value_t = 20.0)]
    noise_sigma: f64,
    /// Synthetic noisy replicas per clean stream.
    #[arg(long, default_value_t = 4)]
    replicas: usize,
    #[arg(long, default_value_t = 64)]
    cells: usize,
    #[arg(long, default_value_t = 5)]
    lookback: usize,
    #[arg(long)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "eval", rename_all = "snake_case")]
enum EvalCommand {
    /// Mean per-joint position error in millimetres.
    Pose(EvalPoseArgs),
    /// Voxel MSE of refined outputs and tricubic baselines vs ground truth.
    Volume(EvalVolumeArgs),
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct EvalPoseArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// JSON list of [estimated, ground-truth] joint index pairs.
    #[arg(long)]
    subset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize, PartialEq)]
struct EvalVolumeArgs {
    /// Directory of refined output volumes.
    #[arg(long)]
    outputs: PathBuf,
    /// Directory of tricubic-upsampled input volumes.
    #[arg(long)]
    inputs: PathBuf,
    /// Directory of ground-truth native volumes.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BboxArg {
    min: [f64; 3],
    max: [f64; 3],
}

fn parse_bbox(s: &str) -> Result<BboxArg, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bbox must be six numbers: {e}"))?;
    if parts.len() != 6 {
        return Err(format!("bbox needs 6 components, got {}", parts.len()));
    }
    let arg = BboxArg {
        min: [parts[0], parts[1], parts[2]],
        max: [parts[3], parts[4], parts[5]],
    };
    for a in 0..3 {
        if !(arg.min[a] < arg.max[a]) {
            return Err("bbox min must be strictly below max per axis".into());
        }
    }
    Ok(arg)
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    match s {
        "product" => Ok(FusionMode::ProductOfProbabilities),
        "paper-eq3" | "paper_eq3" => Ok(FusionMode::PaperEq3),
        other => Err(format!(
            "unknown fusion mode {other:?}; expected `product` or `paper-eq3`"
        )),
    }
}

fn ensure_supported_factor(factor: usize) -> Result<()> {
    if !matches!(factor, 1 | 2 | 4) {
        bail!("unsupported factor {factor}; supported factors are 1, 2, 4");
    }
    Ok(())
}

/// Dataset directory metadata, written by `synth` and read by the training
/// commands.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    scale: usize,
    seed: u64,
    frame_count: usize,
    camera_count: usize,
    joint_count: usize,
    bbox: Bbox,
    mode: String,
    body: BodyModel,
    motion: MotionSpec,
    rig: RigSpec,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // unknown flags, missing arguments: validation failures
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let threads = if cli.deterministic {
        1
    } else {
        cli.threads.unwrap_or(0)
    };
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("failed to configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    if cli.print_config {
        match serde_json::to_string_pretty(&cli.command) {
            Ok(json) => {
                println!("{json}");
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("failed to serialize configuration: {e}");
                return ExitCode::from(2);
            }
        }
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify_exit(&e))
        }
    }
}

/// 1 for validation failures (bad flags, malformed or missing files,
/// unrealizable configs), 2 for runtime failures.
fn classify_exit(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(io) = cause.downcast_ref::<IoError>() {
            return match io {
                IoError::Io { .. } => 2,
                _ => 1,
            };
        }
        if let Some(net) = cause.downcast_ref::<NetError>() {
            return match net {
                NetError::DivergedLoss { .. } => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<SynthError>().is_some() {
            return 1;
        }
        if let Some(ge) = cause.downcast_ref::<volcap::error::GeometryError>() {
            return match ge {
                volcap::error::GeometryError::UnsupportedFactor(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        let msg = cause.to_string();
        if msg.starts_with("unsupported factor") || msg.contains("validation") {
            return 1;
        }
    }
    2
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Pvh(args) => cmd_pvh(args),
        Command::Upscale(args) => cmd_upscale(args),
        Command::Train(args) => cmd_train(cli, args),
        Command::Pretrain(args) => cmd_pretrain(cli, args),
        Command::Infer(args) => cmd_infer(args),
        Command::Smooth(args) => cmd_smooth(args),
        Command::TrainSmoother(args) => cmd_train_smoother(cli, args),
        Command::Eval(EvalCommand::Pose(args)) => cmd_eval_pose(args),
        Command::Eval(EvalCommand::Volume(args)) => cmd_eval_volume(args),
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    if !path.exists() {
        return Err(anyhow!(IoError::MissingFile(path.into())));
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {what} from {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        anyhow!(IoError::Invalid {
            path: path.into(),
            message: format!("{what}: {e}"),
        })
    })
}

fn volume_name(index: usize) -> String {
    format!("frame{index:06}.pvh")
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    ensure_supported_factor(args.scale)?;
    let body: BodyModel = match &args.body {
        Some(p) => read_json_file(p, "body model")?,
        None => BodyModel::humanoid17(),
    };
    let mut motion: MotionSpec = match &args.motion {
        Some(p) => read_json_file(p, "motion spec")?,
        None => MotionSpec::walk17(args.frames.unwrap_or(25)),
    };
    if let Some(frames) = args.frames {
        motion.frame_count = frames;
    }
    let rig: RigSpec = match &args.rig {
        Some(p) => read_json_file(p, "rig spec")?,
        None => RigSpec::ring4(),
    };

    if cli.verbose > 0 {
        eprintln!(
            "synthesizing {} frames at scale {} with {} cameras",
            motion.frame_count, args.scale, rig.camera_count
        );
    }
    let dataset = generate_dataset(&body, &motion, &rig, 32, args.scale, args.seed, args.mode)?;

    let out = &args.out;
    std::fs::create_dir_all(out)?;
    std::fs::create_dir_all(out.join("coarse"))?;
    std::fs::create_dir_all(out.join("native"))?;
    if args.write_mattes {
        std::fs::create_dir_all(out.join("mattes"))?;
    }

    let provenance = serde_json::json!({
        "tool": "volcap synth",
        "seed": args.seed,
        "scale": args.scale,
    });
    write_calibration(out.join("calibration.json"), &dataset.cameras)?;

    let mut stream = SkeletonStream::new(body.joint_count());
    stream.joint_names = Some(body.bones.iter().map(|b| b.name.clone()).collect());
    stream.provenance = Some(provenance.clone());
    for (i, frame) in dataset.frames.iter().enumerate() {
        stream.push(i as u64, i as f64 / motion.frame_rate, &frame.skeleton);
        write_volume(
            out.join("coarse").join(volume_name(i)),
            &frame.coarse,
            Some(provenance.clone()),
        )?;
        write_volume(
            out.join("native").join(volume_name(i)),
            &frame.native,
            Some(provenance.clone()),
        )?;
        if args.write_mattes {
            for (c, matte) in frame.mattes.iter().enumerate() {
                write_matte(
                    out.join("mattes").join(format!("frame{i:06}_cam{c:02}.png")),
                    matte,
                )?;
            }
        }
    }
    write_skeletons(out.join("skeletons.jsonl"), &stream)?;

    let meta = DatasetMeta {
        scale: args.scale,
        seed: args.seed,
        frame_count: motion.frame_count,
        camera_count: rig.camera_count,
        joint_count: body.joint_count(),
        bbox: dataset.bbox,
        mode: match args.mode {
            FusionMode::PaperEq3 => "paper-eq3".into(),
            FusionMode::ProductOfProbabilities => "product".into(),
        },
        body,
        motion,
        rig,
    };
    std::fs::write(
        out.join("dataset.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    if cli.verbose > 0 {
        eprintln!("wrote dataset to {}", out.display());
    }
    Ok(())
}

fn cmd_pvh(args: &PvhArgs) -> Result<()> {
    let cameras = read_calibration(&args.calib)?;
    if cameras.len() != args.mattes.len() {
        bail!(
            "calibration has {} cameras but {} mattes were given",
            cameras.len(),
            args.mattes.len()
        );
    }
    if args.res == 0 {
        bail!("resolution must be >= 1");
    }
    let views: Vec<volcap::camera::CameraView> = cameras
        .into_iter()
        .zip(&args.mattes)
        .map(|((intr, pose), matte_path)| {
            let matte = read_matte(matte_path)?;
            volcap::camera::CameraView::new(intr, pose, matte).map_err(|e| {
                anyhow!(IoError::Invalid {
                    path: matte_path.into(),
                    message: e.to_string(),
                })
            })
        })
        .collect::<Result<_>>()?;
    let grid = build_pvh(
        &views,
        Point3::new(args.bbox.min[0], args.bbox.min[1], args.bbox.min[2]),
        Point3::new(args.bbox.max[0], args.bbox.max[1], args.bbox.max[2]),
        [args.res; 3],
        args.mode,
    )?;
    write_volume(&args.out, &grid, None)?;
    Ok(())
}

fn cmd_upscale(args: &UpscaleArgs) -> Result<()> {
    ensure_supported_factor(args.factor)?;
    let (grid, header) = read_volume(&args.input)?;
    let up = tricubic_upsample(&grid, args.factor)?;
    write_volume(&args.out, &up, header.provenance)?;
    Ok(())
}

fn load_dataset_triplets(
    data: &Path,
) -> Result<(DatasetMeta, Vec<volcap::network::TrainingTriplet>)> {
    let meta: DatasetMeta = read_json_file(&data.join("dataset.json"), "dataset metadata")?;
    let stream = read_skeletons(data.join("skeletons.jsonl"))?;
    if stream.records.len() != meta.frame_count {
        bail!(
            "dataset declares {} frames, skeleton stream has {}",
            meta.frame_count,
            stream.records.len()
        );
    }
    let mut triplets = Vec::with_capacity(meta.frame_count);
    for (i, record) in stream.records.iter().enumerate() {
        let (coarse, _) = read_volume(data.join("coarse").join(volume_name(i)))?;
        let (native, _) = read_volume(data.join("native").join(volume_name(i)))?;
        let input = tricubic_upsample(&coarse, meta.scale)?;
        triplets.push(volcap::network::TrainingTriplet {
            input_volume: input,
            target_volume: native,
            target_joints: record.skeleton(),
        });
    }
    Ok((meta, triplets))
}

fn resolve_network_config(
    config_path: Option<&PathBuf>,
    meta: &DatasetMeta,
    max_channels: Option<usize>,
    fc_width: Option<usize>,
    batch_size: Option<usize>,
    joints: Option<usize>,
    seed: u64,
) -> Result<NetworkConfig> {
    let mut config = match config_path {
        Some(p) => read_json_file::<NetworkConfig>(p, "network config")?,
        None => NetworkConfig::paper(meta.scale, joints.unwrap_or(meta.joint_count))
            .map_err(anyhow::Error::from)?
            .with_norm_bbox(meta.bbox)
            .with_seed(seed),
    };
    if let Some(c) = max_channels {
        config = config.with_max_channels(c);
    }
    if let Some(w) = fc_width {
        config = config.with_fc_widths(w, w);
    }
    if let Some(b) = batch_size {
        config = config.with_batch_size(b);
    }
    if config.scale != meta.scale {
        bail!(
            "network scale {} does not match dataset scale {}",
            config.scale,
            meta.scale
        );
    }
    config.plan().map_err(anyhow::Error::from)?;
    Ok(config)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let (meta, triplets) = load_dataset_triplets(&args.data)?;
    let mut model = match &args.init {
        Some(ckpt) => read_autoencoder_checkpoint(ckpt)?,
        None => {
            let config = resolve_network_config(
                args.config.as_ref(),
                &meta,
                args.max_channels,
                args.fc_width,
                args.batch_size,
                args.joints,
                args.seed,
            )?;
            build_network::<f32>(config)?
        }
    };
    let augmentation = if args.no_augment {
        Augmentation::Off
    } else {
        Augmentation::On
    };
    let history = train(&mut model, &triplets, args.epochs, augmentation, args.seed)?;
    if cli.verbose > 0 {
        for (e, l) in history.iter().enumerate() {
            eprintln!("epoch {e}: dual loss {l:.6e}");
        }
    } else if let (Some(first), Some(last)) = (history.first(), history.last()) {
        eprintln!(
            "trained {} epochs: dual loss {first:.6e} -> {last:.6e}",
            history.len()
        );
    }
    write_autoencoder_checkpoint(&args.out, &model)?;
    Ok(())
}

fn cmd_pretrain(cli: &Cli, args: &PretrainArgs) -> Result<()> {
    let (meta, triplets) = load_dataset_triplets(&args.data)?;
    let config = resolve_network_config(
        args.config.as_ref(),
        &meta,
        args.max_channels,
        args.fc_width,
        args.batch_size,
        args.joints,
        args.seed,
    )?;
    let mut model = build_network::<f32>(config)?;
    let history = pretrain_encoder(&mut model, &triplets, args.epochs, args.seed)?;
    if cli.verbose > 0 {
        for (e, l) in history.iter().enumerate() {
            eprintln!("epoch {e}: pose loss {l:.6e}");
        }
    }
    write_autoencoder_checkpoint(&args.out, &model)?;
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let model = read_autoencoder_checkpoint(&args.ckpt)?;
    if let Some(scale) = args.scale {
        ensure_supported_factor(scale)?;
        if scale != model.config().scale {
            bail!(
                "requested scale {scale} but the checkpoint was trained at scale {}",
                model.config().scale
            );
        }
    }
    let (coarse, _) = read_volume(&args.volume)?;
    let (skeleton, refined) = model.infer(&coarse)?;
    let mut stream = SkeletonStream::new(skeleton.joint_count());
    stream.provenance = Some(serde_json::json!({
        "tool": "volcap infer",
        "ckpt": args.ckpt.display().to_string(),
        "scale": model.config().scale,
    }));
    stream.push(0, 0.0, &skeleton);
    write_skeletons(&args.out_skeleton, &stream)?;
    if let Some(out_volume) = &args.out_volume {
        write_volume(out_volume, &refined, None)?;
    }
    Ok(())
}

fn cmd_smooth(args: &SmoothArgs) -> Result<()> {
    let smoother = read_smoother_checkpoint(&args.ckpt)?;
    let stream = read_skeletons(&args.input)?;
    let width = smoother.config().vector_width;
    if stream.joint_count * 3 != width {
        bail!(
            "stream has {} joints; smoother expects {}",
            stream.joint_count,
            width / 3
        );
    }
    let bbox = smoother.config().norm_bbox;
    let frames: Vec<Vec<f32>> = stream
        .records
        .iter()
        .map(|r| {
            normalize_joints(&r.skeleton(), &bbox)
                .into_iter()
                .map(|v| v as f32)
                .collect()
        })
        .collect();
    let smoothed = smoother
        .smooth_sequence(&frames)
        .map_err(|e| anyhow!("smoothing failed: {e}"))?;
    let mut out = SkeletonStream::new(stream.joint_count);
    out.joint_names = stream.joint_names.clone();
    out.provenance = Some(serde_json::json!({
        "tool": "volcap smooth",
        "ckpt": args.ckpt.display().to_string(),
    }));
    for (r, s) in stream.records.iter().zip(&smoothed) {
        let flat: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let frame = denormalize_joints(&flat, &bbox);
        out.push(r.frame, r.time, &frame);
    }
    write_skeletons(&args.out, &out)?;
    Ok(())
}

fn cmd_train_smoother(cli: &Cli, args: &TrainSmootherArgs) -> Result<()> {
    if !args.noisy.is_empty() && args.noisy.len() != args.clean.len() {
        bail!(
            "{} noisy streams for {} clean streams",
            args.noisy.len(),
            args.clean.len()
        );
    }
    let clean_streams: Vec<SkeletonStream> = args
        .clean
        .iter()
        .map(|p| read_skeletons(p).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let joint_count = clean_streams
        .first()
        .map(|s| s.joint_count)
        .ok_or_else(|| anyhow!("at least one clean stream required"))?;

    // work in normalized coordinates
    let bbox = Bbox::new([-1000.0, -1000.0, 0.0], [1000.0, 1000.0, 2000.0]);
    let normalize = |s: &SkeletonStream| -> Vec<Vec<f32>> {
        s.records
            .iter()
            .map(|r| {
                normalize_joints(&r.skeleton(), &bbox)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            })
            .collect()
    };

    let mut data: Vec<(Vec<Vec<f32>>, Vec<Vec<f32>>)> = Vec::new();
    if args.noisy.is_empty() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        // sigma in mm, normalized per axis by the bbox half-extent
        for stream in &clean_streams {
            let clean = normalize(stream);
            for _ in 0..args.replicas.max(1) {
                let noisy: Vec<Vec<f32>> = clean
                    .iter()
                    .map(|frame| {
                        frame
                            .iter()
                            .enumerate()
                            .map(|(k, &v)| {
                                let axis = k % 3;
                                let half = (bbox.max[axis] - bbox.min[axis]) / 2.0;
                                let gauss: f64 = {
                                    // Box-Muller from two uniforms
                                    let u1: f64 = rng.gen_range(1e-12..1.0);
                                    let u2: f64 = rng.gen_range(0.0..1.0);
                                    (-2.0 * u1.ln()).sqrt()
                                        * (std::f64::consts::TAU * u2).cos()
                                };
                                v + (gauss * args.noise_sigma / half) as f32
                            })
                            .collect()
                    })
                    .collect();
                data.push((noisy, clean.clone()));
            }
        }
    } else {
        for (noisy_path, stream) in args.noisy.iter().zip(&clean_streams) {
            let noisy_stream = read_skeletons(noisy_path)?;
            if noisy_stream.records.len() != stream.records.len() {
                bail!(
                    "{}: noisy stream length {} != clean length {}",
                    noisy_path.display(),
                    noisy_stream.records.len(),
                    stream.records.len()
                );
            }
            data.push((normalize(&noisy_stream), normalize(stream)));
        }
    }

    let config = SmootherConfig {
        layers: 2,
        cells: args.cells,
        lookback: args.lookback,
        vector_width: 3 * joint_count,
        norm_bbox: bbox,
        seed: args.seed,
    };
    let mut smoother = build_smoother::<f32>(config).map_err(|e| anyhow!("{e}"))?;
    let history = train_smoother(&mut smoother, &data, args.epochs, args.seed)
        .map_err(|e| anyhow!("{e}"))?;
    if cli.verbose > 0 {
        for (e, l) in history.iter().enumerate() {
            eprintln!("epoch {e}: loss {l:.6e}");
        }
    }
    write_smoother_checkpoint(&args.out, &smoother)?;
    Ok(())
}

fn cmd_eval_pose(args: &EvalPoseArgs) -> Result<()> {
    let est = read_skeletons(&args.est)?;
    let gt = read_skeletons(&args.gt)?;
    let subset: JointSubset = match &args.subset {
        Some(p) => JointSubset(read_json_file(p, "joint subset")?),
        None => JointSubset::identity(est.joint_count.min(gt.joint_count)),
    };
    let report = per_joint_error(&est.frames(), &gt.frames(), &subset)
        .map_err(|e| anyhow!("pose evaluation: {e}"))?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!("mean per-joint error: {:.3} mm", report.mean_mm);
    Ok(())
}

fn sorted_volumes(dir: &Path) -> Result<Vec<VoxelGrid>> {
    if !dir.is_dir() {
        return Err(anyhow!(IoError::MissingFile(dir.into())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pvh").unwrap_or(false))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_volume(p).map(|(g, _)| g).map_err(anyhow::Error::from))
        .collect()
}

fn cmd_eval_volume(args: &EvalVolumeArgs) -> Result<()> {
    let outputs = sorted_volumes(&args.outputs)?;
    let inputs = sorted_volumes(&args.inputs)?;
    let gt = sorted_volumes(&args.gt)?;
    let report =
        voxel_mse_report(&outputs, &inputs, &gt).map_err(|e| anyhow!("volume evaluation: {e}"))?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "voxel MSE (x10^-3): output {:.3} vs tricubic input {:.3}",
        report.display_output_mse, report.display_input_mse
    );
    Ok(())
}
