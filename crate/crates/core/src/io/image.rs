use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::render::ImageGrid;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `img` as 8-bit gray or RGB; the format follows the file extension
/// (`.png`, `.ppm`, `.pgm`).
pub fn save_image(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized buffer")),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized buffer")),
    };
    dynamic
        .save(path.as_ref())
        .map_err(|e| Error::format(format!("{}: {e}", path.as_ref().display())))
}

/// Reads a PNG or PNM file. Gray sources give one channel, everything else
/// three; values are scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    let (channels, raw) = if gray {
        (1, img.into_luma8().into_raw())
    } else {
        (3, img.into_rgb8().into_raw())
    };
    ImageGrid::new(h, w, channels, raw.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Lays `tiles` out row by row, `cols` per row, separated by `gap` pixels of
/// `background`. All tiles must share one shape.
pub fn tile(tiles: &[ImageGrid], cols: usize, gap: usize, background: f64) -> Result<ImageGrid> {
    let first = tiles.first().ok_or_else(|| Error::shape("no tiles"))?;
    if cols == 0 || tiles.iter().any(|t| !t.same_shape(first)) {
        return Err(Error::shape("tiles must share one shape and cols must be positive"));
    }
    let (th, tw, ch) = (first.height(), first.width(), first.channels());
    let rows = tiles.len().div_ceil(cols);
    let cols = cols.min(tiles.len());
    let height = rows * th + (rows - 1) * gap;
    let width = cols * tw + (cols - 1) * gap;
    ImageGrid::from_fn(height, width, ch, |r, c, k| {
        let (tr, tc) = (r / (th + gap), c / (tw + gap));
        let (ir, ic) = (r % (th + gap), c % (tw + gap));
        match tiles.get(tr * cols + tc) {
            Some(t) if ir < th && ic < tw => t.get(ir, ic, k),
            _ => background,
        }
    })
}
