use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Renderer settings shared by training and inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Flow kernel width in normalized units.
    pub sigma: f64,
    /// Square image side in pixels.
    pub image_size: usize,
    /// 1 (gray) or 3 (RGB) output channels for inference commands.
    pub channels: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            sigma: 0.15,
            image_size: 64,
            channels: 1,
        }
    }
}

/// Weight files used by inference commands when the matching flag is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stitching: Option<PathBuf>,
    pub eyes: Option<PathBuf>,
    pub lip: Option<PathBuf>,
}

/// Retargeting sweep range: `start`, `start + step`, ... up to `end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub sweep_start: f64,
    pub sweep_end: f64,
    pub sweep_step: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sweep_start: 0.0,
            sweep_end: 0.8,
            sweep_step: 0.1,
        }
    }
}

impl EvalConfig {
    /// Sweep values, computed as `start + i * step` so that no rounding
    /// accumulates.
    pub fn sweep(&self) -> Result<Vec<f64>> {
        sweep_values(self.sweep_start, self.sweep_end, self.sweep_step)
    }
}

fn sweep_values(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::config(format!(
            "invalid sweep {start}..{end} step {step}"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

/// Contents of a run configuration file. Every section and key is optional;
/// unknown ones are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub render: RenderConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative model paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = RunConfig::from_toml(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.model.stitching, &mut cfg.model.eyes, &mut cfg.model.lip]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.render.channels != 1 && self.render.channels != 3 {
            return Err(Error::config(format!(
                "render.channels must be 1 or 3, got {}",
                self.render.channels
            )));
        }
        self.eval.sweep()?;
        Ok(())
    }

    /// Training settings with the renderer section folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sigma: self.render.sigma,
            image_size: self.render.image_size,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["[train]\nstpes = 3\n", "[modle]\n", "[train.weights]\ncond_eye = 1.0\n"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            "[train]\nsteps = 10\nseed = 4\n[train.weights]\ncond_eyes = 5.0\n\
             [render]\nsigma = 0.2\nimage_size = 32\n[model]\neyes = \"e.lpkm\"\n\
             [eval]\nsweep_start = -0.2\n",
        )
        .unwrap();
        let t = cfg.train_config();
        assert_eq!((t.steps, t.seed, t.sigma, t.image_size), (10, 4, 0.2, 32));
        assert_eq!(t.weights.cond_eyes, 5.0);
        assert_eq!(cfg.model.eyes.as_deref(), Some(Path::new("e.lpkm")));
        assert_eq!(cfg.eval.sweep().unwrap().len(), 11);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn default_sweep_has_nine_values() {
        let s = EvalConfig::default().sweep().unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], 0.0);
        assert!((s[8] - 0.8).abs() < 1e-12);
        assert!(sweep_values(0.0, 1.0, 0.0).is_err());
    }
}
