use std::path::PathBuf;

use lpkm_core::conditions::{
    driving_eyes_scalar, driving_lip_scalar, eyes_open_condition, lip_open_condition,
};
use lpkm_core::face::FaceTemplate;
use lpkm_core::io::{read_keypoints, read_motion, save_image, write_keypoints};
use lpkm_core::motion::{relative_driving, transform_scaled, KeypointSet, MotionParams};
use lpkm_core::render::render;
use lpkm_core::retarget::{infer_keypoints, FrameConditions, RetargetFlags};
use lpkm_core::trainer::gen_sample;

use crate::common::{create_dir, create_file, load_config, load_models, open_file, usage, CliResult, WeightPaths};

/// Animate a source identity with a driving motion sequence.
#[derive(Debug, clap::Args)]
pub struct AnimateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use synthetic sample N (from the configured seed) as the source.
    #[arg(long, conflicts_with_all = ["canonical", "source"])]
    pub sample: Option<u64>,
    /// Source canonical keypoints (first frame of a keypoint table).
    #[arg(long, requires = "source")]
    pub canonical: Option<PathBuf>,
    /// Source motion (first row of a motion table).
    #[arg(long, requires = "canonical")]
    pub source: Option<PathBuf>,
    /// Driving motion sequence; frame 0 is the reference.
    #[arg(long)]
    pub driving: PathBuf,
    /// Canonical keypoints of the driving identity, used to measure the
    /// driving eye and lip openness. Defaults to the face template.
    #[arg(long)]
    pub driving_canonical: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stitch: bool,
    #[arg(long)]
    pub eyes: bool,
    #[arg(long)]
    pub lip: bool,
    /// Also write rasterized driving-identity frames to OUT/reference.
    #[arg(long)]
    pub reference: bool,
    #[command(flatten)]
    pub weights: WeightPaths,
}

#[derive(serde::Serialize)]
struct ConditionRow {
    frame: usize,
    eyes_left: f64,
    eyes_right: f64,
    lip: f64,
    driving_eyes: f64,
    driving_lip: f64,
}

fn first<T: Copy>(v: Vec<T>) -> T {
    v[0]
}

pub fn run(args: AnimateArgs) -> CliResult {
    let cfg = load_config(args.config.as_deref())?;
    let template = FaceTemplate::default();
    let (size, channels, sigma) = (cfg.render.image_size, cfg.render.channels, cfg.render.sigma);
    let (canonical, source): (KeypointSet, MotionParams) = match (&args.sample, &args.canonical, &args.source) {
        (Some(i), _, _) => {
            let s = gen_sample(&template, cfg.train.seed, *i, size)?;
            (s.canonical, s.source)
        }
        (None, Some(c), Some(m)) => (first(read_keypoints(open_file(c)?)?), first(read_motion(open_file(m)?)?)),
        _ => return Err(usage("give either --sample or both --canonical and --source")),
    };
    let driving = read_motion(open_file(&args.driving)?)?;
    let driving_canonical = match &args.driving_canonical {
        Some(p) => first(read_keypoints(open_file(p)?)?),
        None => template.canonical,
    };
    let flags = RetargetFlags { stitch: args.stitch, eyes: args.eyes, lip: args.lip };
    let models = load_models(&cfg, flags, &args.weights)?;

    let x_s = transform_scaled(&canonical, &source)?;
    let image = template.rasterize(&x_s, size, channels)?;
    let eyes_s = eyes_open_condition(&x_s)?;
    let lip_s = lip_open_condition(&x_s)?;
    let driving_kp = driving
        .iter()
        .map(|p| transform_scaled(&driving_canonical, p))
        .collect::<lpkm_core::Result<Vec<_>>>()?;
    let (eyes_d, lip_d) = if args.eyes || args.lip {
        let eyes = driving_kp.iter().map(eyes_open_condition).collect::<lpkm_core::Result<Vec<_>>>()?;
        let lips = driving_kp.iter().map(lip_open_condition).collect::<lpkm_core::Result<Vec<_>>>()?;
        (driving_eyes_scalar(eyes_s, &eyes)?, driving_lip_scalar(lip_s, &lips)?)
    } else {
        (vec![eyes_s.mean(); driving.len()], vec![lip_s.0; driving.len()])
    };

    create_dir(&args.out)?;
    let reference_dir = args.out.join("reference");
    if args.reference {
        create_dir(&reference_dir)?;
    }
    let mut frames = Vec::with_capacity(driving.len());
    let mut rows = csv::Writer::from_writer(create_file(&args.out.join("conditions.csv"))?);
    for (i, d) in driving.iter().enumerate() {
        let x_d = relative_driving(&canonical, &source, d, &driving[0])?;
        let cond = FrameConditions {
            eyes_source: eyes_s,
            eyes_driving: eyes_d[i],
            lip_source: lip_s,
            lip_driving: lip_d[i],
        };
        let x = infer_keypoints(flags, &x_s, &x_d, &models, &cond)?;
        let frame = render(&image, &x_s, &x, sigma)?.clamped();
        save_image(args.out.join(format!("frame_{i:04}.png")), &frame)?;
        if args.reference {
            let r = template.rasterize(&driving_kp[i], size, channels)?;
            save_image(reference_dir.join(format!("frame_{i:04}.png")), &r)?;
        }
        let e = eyes_open_condition(&x)?;
        rows.serialize(ConditionRow {
            frame: i,
            eyes_left: e.left,
            eyes_right: e.right,
            lip: lip_open_condition(&x)?.0,
            driving_eyes: eyes_d[i],
            driving_lip: lip_d[i],
        })?;
        frames.push(x);
    }
    rows.flush()?;
    write_keypoints(create_file(&args.out.join("keypoints.csv"))?, &frames)?;
    println!("wrote {} frames to {}", frames.len(), args.out.display());
    Ok(())
}
