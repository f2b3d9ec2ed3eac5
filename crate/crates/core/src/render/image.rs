use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `H x W x C` image with `f64` values, nominally in `[0, 1]`.
///
/// Pixel `(row, col)` sits at normalized `x = -1 + 2 col / (W - 1)`,
/// `y = 1 - 2 row / (H - 1)`, so `[-1, 1]^2` spans the grid corners with `y`
/// pointing up.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::shape(format!(
                "images must be at least 2x2, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite pixel".into()));
        }
        Ok(ImageGrid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        ImageGrid::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        ImageGrid::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.data.clone(),
        )
        .expect("image dims are consistent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [h, w, c] = *t.shape() else {
            return Err(Error::shape(format!(
                "image tensor must be [H, W, C], got {:?}",
                t.shape()
            )));
        };
        ImageGrid::new(h, w, c, t.data().to_vec())
    }

    /// Largest absolute pixel difference.
    pub fn max_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::shape("image shapes differ"));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Values clamped into `[0, 1]`.
    pub fn clamped(&self) -> ImageGrid {
        ImageGrid {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }
}

/// Normalized coordinates of pixel `(row, col)` on an `h x w` grid.
pub fn pixel_to_normalized(row: usize, col: usize, h: usize, w: usize) -> (f64, f64) {
    let x = -1.0 + 2.0 * col as f64 / (w - 1) as f64;
    let y = 1.0 - 2.0 * row as f64 / (h - 1) as f64;
    (x, y)
}
