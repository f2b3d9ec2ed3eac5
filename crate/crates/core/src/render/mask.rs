use std::fmt;
use std::str::FromStr;

use super::image::{pixel_to_normalized, ImageGrid};
use crate::conditions::ApertureIndices;
use crate::error::{Error, Result};
use crate::face::{FaceTemplate, BROWS, CHIN, LEFT_EYE, MOUTH, RIGHT_EYE};
use crate::motion::KeypointSet;
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    /// Everything above the shoulder line.
    NonShoulder,
    Eyes,
    Lip,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::NonShoulder => "non-shoulder",
            Region::Eyes => "eyes",
            Region::Lip => "lip",
        })
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-shoulder" => Ok(Region::NonShoulder),
            "eyes" => Ok(Region::Eyes),
            "lip" => Ok(Region::Lip),
            other => Err(Error::domain(format!("unknown region {other:?}"))),
        }
    }
}

/// Binary `H x W` mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    region: Region,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RegionMask {
    pub fn region(&self) -> Region {
        self.region
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// 0/1 values, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0.0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// `1 - mask`, broadcast over `channels`, as an `[H, W, C]` tensor.
    pub fn complement_tensor(&self, channels: usize) -> Tensor {
        let data = self
            .data
            .iter()
            .flat_map(|&m| std::iter::repeat_n(1.0 - m, channels))
            .collect();
        Tensor::new(vec![self.height, self.width, channels], data).expect("consistent dims")
    }

    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::new(self.height, self.width, 1, self.data.clone()).expect("consistent dims")
    }
}

/// Rows covered by one aperture: from its fully opened lower edge to an
/// anchor feature (brow or chin) on the far side, padded.
fn aperture_band(t: &FaceTemplate, kp: &KeypointSet, ix: ApertureIndices, anchor: usize) -> [f64; 2] {
    let (l, r) = (kp[ix.left_corner], kp[ix.right_corner]);
    let width = ((r[0] - l[0]).powi(2) + (r[1] - l[1]).powi(2)).sqrt();
    let cy = 0.5 * (l[1] + r[1]);
    let reserve = t.masks.open_reserve * width;
    let mut lo = cy - reserve;
    let mut hi = cy + reserve;
    for i in [ix.left_corner, ix.right_corner, ix.upper, ix.lower, anchor] {
        lo = lo.min(kp[i][1]);
        hi = hi.max(kp[i][1]);
    }
    [lo - t.masks.pad, hi + t.masks.pad]
}

/// Mask for `region` on an `height x width` grid. Every mask is a union of
/// full-width row bands: the eye band runs from the lower of the two opened
/// lower lids to the top of the frame, since nothing above the brows carries
/// its own keypoint; the lip band runs from the chin to the opened upper lip. Eye and lip bands
/// follow the keypoints `kp` (usually the posed source keypoints); the
/// shoulder line is fixed in image space.
pub fn region_mask(
    template: &FaceTemplate,
    region: Region,
    kp: &KeypointSet,
    height: usize,
    width: usize,
) -> Result<RegionMask> {
    if height < 2 || width < 2 {
        return Err(Error::shape("mask grid must be at least 2x2"));
    }
    if !kp.is_finite() {
        return Err(Error::domain("non-finite keypoints"));
    }
    let bands: Vec<[f64; 2]> = match region {
        Region::NonShoulder => vec![[template.masks.shoulder_line, f64::INFINITY]],
        Region::Eyes => {
            let l = aperture_band(template, kp, LEFT_EYE, BROWS[0]);
            let r = aperture_band(template, kp, RIGHT_EYE, BROWS[1]);
            vec![[l[0].min(r[0]), f64::INFINITY]]
        }
        Region::Lip => vec![aperture_band(template, kp, MOUTH, CHIN)],
    };
    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (_, y) = pixel_to_normalized(r, c, height, width);
            let inside = bands.iter().any(|b| y >= b[0] && y <= b[1]);
            data.push(if inside { 1.0 } else { 0.0 });
        }
    }
    Ok(RegionMask {
        region,
        height,
        width,
        data,
    })
}
