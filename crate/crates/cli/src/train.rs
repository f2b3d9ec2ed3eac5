use std::path::{Path, PathBuf};

use lpkm_core::face::FaceTemplate;
use lpkm_core::io::{load_mlp, save_image, save_mlp, tile, write_curve};
use lpkm_core::numcore::Mlp;
use lpkm_core::render::{render, ImageGrid};
use lpkm_core::retarget::{
    apply_stitch, eyes_offset, lip_offset, stitch_offset, EyesRetargetWeights, LipRetargetWeights,
    StitchingWeights,
};
use lpkm_core::trainer::{
    gen_split, init_rng, shoulder_consistency, train_eyes, train_lip, train_stitching, CurvePoint,
    SyntheticSample, TargetMode, TrainConfig,
};
use lpkm_core::Result;

use crate::common::{create_dir, create_file, load_config, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Stitching,
    Eyes,
    Lip,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stitching => "stitching",
            Stage::Eyes => "eyes",
            Stage::Lip => "lip",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    /// Uniform driving scalars in [0, 0.8].
    Random,
    /// The source's own measured condition.
    Source,
}

/// Train one network against the fixed renderer.
#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub stage: Stage,
    /// Output directory for weights, loss curve and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from these weights instead of a seeded initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Driving scalar source for the eyes and lip stages.
    #[arg(long, value_enum, default_value_t = Target::Random)]
    pub target: Target,
}

/// Number of held-out samples shown in checkpoint previews.
const PREVIEW_SAMPLES: usize = 4;
/// Driving scalars shown in eyes and lip previews.
const PREVIEW_SCALARS: [f64; 3] = [0.0, 0.4, 0.8];

enum Net {
    Stitching(StitchingWeights),
    Eyes(EyesRetargetWeights),
    Lip(LipRetargetWeights),
}

impl Net {
    fn wrap(stage: Stage, mlp: Mlp) -> Result<Net> {
        Ok(match stage {
            Stage::Stitching => Net::Stitching(StitchingWeights::from_mlp(mlp)?),
            Stage::Eyes => Net::Eyes(EyesRetargetWeights::from_mlp(mlp)?),
            Stage::Lip => Net::Lip(LipRetargetWeights::from_mlp(mlp)?),
        })
    }

    /// One preview row: the source image followed by renders of the network
    /// output.
    fn preview_row(&self, s: &SyntheticSample, sigma: f64) -> Result<Vec<ImageGrid>> {
        let mut row = vec![s.image.clone()];
        let warp = |x| render(&s.image, &s.source_kp, &x, sigma).map(|i| i.clamped());
        match self {
            Net::Stitching(w) => {
                let (d, shift) = stitch_offset(w, &s.source_kp, &s.driving_kp)?;
                row.push(warp(s.driving_kp)?);
                row.push(warp(apply_stitch(&s.driving_kp, &d, shift))?);
            }
            Net::Eyes(w) => {
                for c in PREVIEW_SCALARS {
                    row.push(warp(s.source_kp + eyes_offset(w, &s.source_kp, s.eyes, c)?)?);
                }
            }
            Net::Lip(w) => {
                for c in PREVIEW_SCALARS {
                    row.push(warp(s.source_kp + lip_offset(w, &s.source_kp, s.lip, c)?)?);
                }
            }
        }
        Ok(row)
    }
}

fn preview(net: &Net, samples: &[SyntheticSample], sigma: f64) -> Result<ImageGrid> {
    let mut tiles = Vec::new();
    let mut cols = 1;
    for s in samples.iter().take(PREVIEW_SAMPLES) {
        let row = net.preview_row(s, sigma)?;
        cols = row.len();
        tiles.extend(row);
    }
    tile(&tiles, cols, 2, 1.0)
}

fn write_checkpoint(
    dir: &Path,
    stage: Stage,
    step: usize,
    mlp: &Mlp,
    samples: &[SyntheticSample],
    sigma: f64,
) -> Result<()> {
    let stem = dir.join(format!("{}_step{step:05}", stage.name()));
    save_mlp(stem.with_extension("lpkm"), mlp)?;
    let net = Net::wrap(stage, mlp.clone())?;
    save_image(stem.with_extension("png"), &preview(&net, samples, sigma)?)
}

pub fn run(args: TrainArgs) -> CliResult {
    let cfg = load_config(args.config.as_deref())?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let template = FaceTemplate::default();
    let (data, held) = gen_split(&template, &train_cfg)?;
    let preview_set = if held.is_empty() { &data } else { &held };
    create_dir(&args.out)?;

    let init = match &args.init {
        Some(p) => load_mlp(p)?,
        None => {
            let mut rng = init_rng(train_cfg.seed);
            match args.stage {
                Stage::Stitching => StitchingWeights::init(&mut rng).into_mlp(),
                Stage::Eyes => EyesRetargetWeights::init(&mut rng).into_mlp(),
                Stage::Lip => LipRetargetWeights::init(&mut rng).into_mlp(),
            }
        }
    };
    let mode = match args.target {
        Target::Random => TargetMode::Random,
        Target::Source => TargetMode::Source,
    };
    let mut checkpoint = |step: usize, mlp: &Mlp| {
        write_checkpoint(&args.out, args.stage, step, mlp, preview_set, train_cfg.sigma)
    };

    let mut summary: Vec<(&str, f64)> = Vec::new();
    let (weights, curve) = match args.stage {
        Stage::Stitching => {
            let init = StitchingWeights::from_mlp(init)?;
            if !held.is_empty() {
                summary.push(("heldout_shoulder_raw", shoulder_consistency(&template, &held, None, train_cfg.sigma)?));
                summary.push(("heldout_shoulder_initial", shoulder_consistency(&template, &held, Some(&init), train_cfg.sigma)?));
            }
            let run = train_stitching(&train_cfg, &template, &data, init, &mut checkpoint)?;
            if !held.is_empty() {
                let last = shoulder_consistency(&template, &held, Some(&run.weights), train_cfg.sigma)?;
                let first = summary[1].1;
                summary.push(("heldout_shoulder_final", last));
                summary.push(("heldout_shoulder_ratio", last / first));
            }
            (run.weights.into_mlp(), run.curve)
        }
        Stage::Eyes => {
            let init = EyesRetargetWeights::from_mlp(init)?;
            let run = train_eyes(&train_cfg, &template, &data, init, mode, &mut checkpoint)?;
            (run.weights.into_mlp(), run.curve)
        }
        Stage::Lip => {
            let init = LipRetargetWeights::from_mlp(init)?;
            let run = train_lip(&train_cfg, &template, &data, init, mode, &mut checkpoint)?;
            (run.weights.into_mlp(), run.curve)
        }
    };

    let name = args.stage.name();
    save_mlp(args.out.join(format!("{name}.lpkm")), &weights)?;
    write_curve(create_file(&args.out.join(format!("{name}_loss.csv")))?, &curve)?;
    write_summary(&args.out.join(format!("{name}_summary.csv")), &train_cfg, &curve, &summary)?;
    match curve.last() {
        Some(p) => println!("{name}: {} steps, final loss {:.6}", curve.len(), p.terms.total),
        None => println!("{name}: 0 steps"),
    }
    for (k, v) in &summary {
        println!("{k} = {v:.6}");
    }
    Ok(())
}

fn write_summary(
    path: &Path,
    cfg: &TrainConfig,
    curve: &[CurvePoint],
    extra: &[(&str, f64)],
) -> CliResult {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["metric", "value"])?;
    w.write_record(["steps", &cfg.steps.to_string()])?;
    w.write_record(["seed", &cfg.seed.to_string()])?;
    if let Some(p) = curve.last() {
        for (k, v) in [
            ("final_consistency", p.terms.consistency),
            ("final_condition", p.terms.condition),
            ("final_regularization", p.terms.regularization),
            ("final_total", p.terms.total),
        ] {
            w.write_record([k, &v.to_string()])?;
        }
    }
    for (k, v) in extra {
        w.write_record([*k, &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
