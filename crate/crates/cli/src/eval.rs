use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lpkm_core::io::{load_image, read_motion};
use lpkm_core::metrics::{aed_style, apd_style, forward_direction, l1, mae_angular, psnr, ssim};
use lpkm_core::Error;

use crate::common::{create_file, open_file, usage, CliError, CliResult};

/// Compare predicted frames against reference frames.
#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Directory of reference `frame_*.png` images.
    #[arg(long)]
    pub reference: PathBuf,
    /// Directory of predicted frames with the same file names.
    #[arg(long)]
    pub predicted: PathBuf,
    /// Reference motion table, enabling the motion metrics.
    #[arg(long, requires = "predicted_motion")]
    pub reference_motion: Option<PathBuf>,
    #[arg(long, requires = "reference_motion")]
    pub predicted_motion: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

fn frame_names(dir: &Path) -> CliResult<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.starts_with("frame_") && name.ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn run(args: EvalArgs) -> CliResult {
    let names = frame_names(&args.reference)?;
    if names.is_empty() {
        return Err(usage(format!("no frame_*.png files in {}", args.reference.display())));
    }
    if frame_names(&args.predicted)? != names {
        return Err(CliError::from(Error::Format("reference and predicted frame sets differ".into())));
    }
    let motions = match (&args.reference_motion, &args.predicted_motion) {
        (Some(r), Some(p)) => {
            let (r, p) = (read_motion(open_file(r)?)?, read_motion(open_file(p)?)?);
            if r.len() != names.len() || p.len() != names.len() {
                return Err(Error::Format(format!(
                    "{} frames but motion tables have {} and {} rows",
                    names.len(),
                    r.len(),
                    p.len()
                ))
                .into());
            }
            Some((r, p))
        }
        _ => None,
    };

    let mut w = csv::Writer::from_writer(create_file(&args.out)?);
    w.write_record(["frame", "psnr", "ssim", "l1", "aed_style", "apd_style", "mae_deg"])?;
    let mut sums = [0.0f64; 6];
    for (i, name) in names.iter().enumerate() {
        let a = load_image(args.reference.join(name))?;
        let b = load_image(args.predicted.join(name))?;
        let mut row = [Some(psnr(&a, &b)?), Some(ssim(&a, &b)?), Some(l1(&a, &b)?), None, None, None];
        if let Some((r, p)) = &motions {
            row[3] = Some(aed_style(&r[i], &p[i]));
            row[4] = Some(apd_style(&r[i], &p[i]));
            row[5] = Some(mae_angular(forward_direction(&r[i]), forward_direction(&p[i]))?);
        }
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.unwrap_or(0.0);
        }
        let mut rec = vec![name.trim_start_matches("frame_").trim_end_matches(".png").to_string()];
        rec.extend(row.map(fmt));
        w.write_record(rec)?;
    }
    let n = names.len() as f64;
    let mut mean = vec!["mean".to_string()];
    for (k, s) in sums.iter().enumerate() {
        mean.push(if k < 3 || motions.is_some() { (s / n).to_string() } else { String::new() });
    }
    w.write_record(mean)?;
    w.flush()?;
    println!("evaluated {} frames into {}", names.len(), args.out.display());
    Ok(())
}
