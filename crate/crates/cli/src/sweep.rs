use std::path::PathBuf;

use lpkm_core::conditions::{eyes_open_condition, lip_open_condition};
use lpkm_core::face::FaceTemplate;
use lpkm_core::io::{save_image, tile, EvalConfig};
use lpkm_core::render::render;
use lpkm_core::retarget::{infer_keypoints, FrameConditions, RetargetFlags};
use lpkm_core::trainer::gen_sample;

use crate::common::{create_dir, create_file, load_config, load_models, usage, CliResult, WeightPaths};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    Eyes,
    Lip,
}

/// Sweep the driving eyes or lip scalar over a range on synthetic sources.
#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// First synthetic sample used as a source.
    #[arg(long, default_value_t = 0)]
    pub sample: u64,
    /// Number of consecutive samples.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Sweep start; overrides the config. Values outside [0, 0.8] are allowed.
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub end: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub weights: WeightPaths,
}

#[derive(serde::Serialize)]
struct RatioRow {
    sample: u64,
    frame: usize,
    driving: f64,
    eyes_left: f64,
    eyes_right: f64,
    eyes_mean: f64,
    lip: f64,
}

pub fn run(args: SweepArgs) -> CliResult {
    let cfg = load_config(args.config.as_deref())?;
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let range = EvalConfig {
        sweep_start: args.start.unwrap_or(cfg.eval.sweep_start),
        sweep_end: args.end.unwrap_or(cfg.eval.sweep_end),
        sweep_step: args.step.unwrap_or(cfg.eval.sweep_step),
    };
    let values = range.sweep().map_err(|e| usage(e.to_string()))?;
    let flags = RetargetFlags {
        stitch: false,
        eyes: args.kind == Kind::Eyes,
        lip: args.kind == Kind::Lip,
    };
    let models = load_models(&cfg, flags, &args.weights)?;
    let template = FaceTemplate::default();
    let (size, sigma) = (cfg.render.image_size, cfg.render.sigma);

    let frames_dir = args.out.join("frames");
    create_dir(&frames_dir)?;
    let mut rows = csv::Writer::from_writer(create_file(&args.out.join("ratios.csv"))?);
    let mut tiles = Vec::new();
    for index in args.sample..args.sample + args.count {
        let s = gen_sample(&template, cfg.train.seed, index, size)?;
        let image = template.rasterize(&s.source_kp, size, cfg.render.channels)?;
        for (k, &c) in values.iter().enumerate() {
            let cond = FrameConditions {
                eyes_source: s.eyes,
                eyes_driving: c,
                lip_source: s.lip,
                lip_driving: c,
            };
            let x = infer_keypoints(flags, &s.source_kp, &s.source_kp, &models, &cond)?;
            let frame = render(&image, &s.source_kp, &x, sigma)?.clamped();
            save_image(frames_dir.join(format!("s{index:05}_f{k:02}.png")), &frame)?;
            tiles.push(frame);
            let e = eyes_open_condition(&x)?;
            rows.serialize(RatioRow {
                sample: index,
                frame: k,
                driving: c,
                eyes_left: e.left,
                eyes_right: e.right,
                eyes_mean: e.mean(),
                lip: lip_open_condition(&x)?.0,
            })?;
        }
    }
    rows.flush()?;
    save_image(args.out.join("grid.png"), &tile(&tiles, values.len(), 2, 1.0)?)?;
    println!(
        "swept {} values over {} samples into {}",
        values.len(),
        args.count,
        args.out.display()
    );
    Ok(())
}
