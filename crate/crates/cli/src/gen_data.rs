use std::path::PathBuf;

use lpkm_core::face::FaceTemplate;
use lpkm_core::io::{save_image, write_keypoints, write_motion};
use lpkm_core::trainer::{gen_dataset_range, SyntheticSample};

use crate::common::{create_dir, create_file, load_config, CliResult};

/// Write a synthetic dataset directory.
#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples; defaults to the training plus held-out counts.
    #[arg(long)]
    pub count: Option<usize>,
    /// Index of the first sample.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
}

#[derive(serde::Serialize)]
struct ConditionRow {
    sample: usize,
    eyes_left: f64,
    eyes_right: f64,
    lip: f64,
    driving_eyes: f64,
    driving_lip: f64,
}

pub fn run(args: GenDataArgs) -> CliResult {
    let cfg = load_config(args.config.as_deref())?;
    let train = cfg.train_config();
    let n = args.count.unwrap_or(train.samples + train.held_out);
    let data = gen_dataset_range(&FaceTemplate::default(), train.seed, args.offset, n, train.image_size)?;

    let images = args.out.join("images");
    create_dir(&images)?;
    for (i, s) in data.iter().enumerate() {
        save_image(images.join(format!("sample_{:05}.png", args.offset + i)), &s.image)?;
    }
    let out = |name: &str| create_file(&args.out.join(name));
    write_keypoints(out("canonical.csv")?, &column(&data, |s| s.canonical))?;
    write_keypoints(out("source_kp.csv")?, &column(&data, |s| s.source_kp))?;
    write_keypoints(out("driving_kp.csv")?, &column(&data, |s| s.driving_kp))?;
    write_motion(out("source_motion.csv")?, &column(&data, |s| s.source))?;
    write_motion(out("driving_motion.csv")?, &column(&data, |s| s.driving))?;

    let mut w = csv::Writer::from_writer(out("conditions.csv")?);
    for (i, s) in data.iter().enumerate() {
        w.serialize(ConditionRow {
            sample: args.offset + i,
            eyes_left: s.eyes.left,
            eyes_right: s.eyes.right,
            lip: s.lip.0,
            driving_eyes: s.driving_eyes,
            driving_lip: s.driving_lip,
        })?;
    }
    w.flush()?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml())?;
    println!("wrote {n} samples to {}", args.out.display());
    Ok(())
}

fn column<T>(data: &[SyntheticSample], f: impl Fn(&SyntheticSample) -> T) -> Vec<T> {
    data.iter().map(f).collect()
}
