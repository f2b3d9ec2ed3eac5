use std::io::BufReader;
use std::path::PathBuf;

use lpkm_core::io::read_tensors;
use lpkm_core::retarget::{EyesRetargetWeights, LipRetargetWeights, StitchingWeights};

use crate::common::{open_file, CliResult};

/// Print the tensor table of a weight file.
#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    pub file: PathBuf,
}

pub fn run(args: InspectArgs) -> CliResult {
    let tensors = read_tensors(BufReader::new(open_file(&args.file)?))?;
    println!("{:<16} {:<14} {:>10}", "name", "shape", "values");
    let mut total = 0;
    for t in &tensors {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        println!("{:<16} {:<14} {:>10}", t.name, dims.join("x"), t.data.len());
        total += t.data.len();
    }
    println!("{} tensors, {total} values", tensors.len());
    let sizes: Option<Vec<usize>> = lpkm_core::io::mlp_from_tensors(&tensors).ok().map(|m| m.sizes());
    let known = [
        (StitchingWeights::SIZES, StitchingWeights::LABEL),
        (EyesRetargetWeights::SIZES, EyesRetargetWeights::LABEL),
        (LipRetargetWeights::SIZES, LipRetargetWeights::LABEL),
    ];
    if let Some((_, label)) = known.iter().find(|(s, _)| sizes.as_deref() == Some(*s)) {
        println!("layout matches the {label} network");
    }
    Ok(())
}
