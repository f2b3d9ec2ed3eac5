//! Eyes-open and lip-open conditions, and the per-frame driving scalars.
//!
//! An aperture ratio is the lid (or inner-lip) gap measured perpendicular to
//! the corner axis, divided by the corner distance. Only the `xy` components
//! are used. A negative gap (crossed lids) reads as closed.

use crate::error::{Error, Result};
use crate::face::{GUIDE_INDICES, LEFT_EYE, MOUTH, RIGHT_EYE};
use crate::motion::{KeypointSet, KEYPOINT_DIM};
use crate::numcore::{CustomOp, Graph, Tensor, Var};

/// Keypoint indices spanning one eye or the mouth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApertureIndices {
    pub left_corner: usize,
    pub right_corner: usize,
    pub upper: usize,
    pub lower: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EyesOpenTuple {
    pub left: f64,
    pub right: f64,
}

impl EyesOpenTuple {
    pub fn mean(&self) -> f64 {
        0.5 * (self.left + self.right)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LipOpenScalar(pub f64);

/// The ten 2D landmarks supervised by the guide loss, in
/// [`GUIDE_INDICES`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuideLandmarks(pub [[f64; 2]; 10]);

impl GuideLandmarks {
    /// Projects the guide keypoints of `kp` onto the image plane.
    pub fn from_keypoints(kp: &KeypointSet) -> Self {
        GuideLandmarks(GUIDE_INDICES.map(|i| [kp[i][0], kp[i][1]]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Ratio of perpendicular gap to corner distance for four 2D points.
pub fn aperture_ratio_points(
    left: [f64; 2],
    right: [f64; 2],
    upper: [f64; 2],
    lower: [f64; 2],
) -> Result<f64> {
    let d = [right[0] - left[0], right[1] - left[1]];
    let v = [upper[0] - lower[0], upper[1] - lower[1]];
    let n = d[0] * d[0] + d[1] * d[1];
    if !(n > 0.0) {
        return Err(Error::DegenerateGeometry(
            "aperture corners coincide".into(),
        ));
    }
    let cross = d[0] * v[1] - d[1] * v[0];
    Ok(cross.max(0.0) / n)
}

pub fn aperture_ratio(kp: &KeypointSet, ix: ApertureIndices) -> Result<f64> {
    let p = |i: usize| [kp[i][0], kp[i][1]];
    aperture_ratio_points(
        p(ix.left_corner),
        p(ix.right_corner),
        p(ix.upper),
        p(ix.lower),
    )
}

pub fn eyes_open_condition(kp: &KeypointSet) -> Result<EyesOpenTuple> {
    Ok(EyesOpenTuple {
        left: aperture_ratio(kp, LEFT_EYE)?,
        right: aperture_ratio(kp, RIGHT_EYE)?,
    })
}

/// Eyes-open tuple from guide landmarks (the first eight are the eye points).
pub fn eyes_open_from_landmarks(lm: &GuideLandmarks) -> Result<EyesOpenTuple> {
    let l = &lm.0;
    Ok(EyesOpenTuple {
        left: aperture_ratio_points(l[0], l[1], l[2], l[3])?,
        right: aperture_ratio_points(l[4], l[5], l[6], l[7])?,
    })
}

pub fn lip_open_condition(kp: &KeypointSet) -> Result<LipOpenScalar> {
    aperture_ratio(kp, MOUTH).map(LipOpenScalar)
}

/// `c_d,i = mean(c_s) * mean(drv_i) / mean(drv_0)`.
pub fn driving_eyes_scalar(source: EyesOpenTuple, driving: &[EyesOpenTuple]) -> Result<Vec<f64>> {
    let means: Vec<f64> = driving.iter().map(EyesOpenTuple::mean).collect();
    relative_scalar(source.mean(), &means)
}

/// `c_d,i = c_s * drv_i / drv_0`.
pub fn driving_lip_scalar(source: LipOpenScalar, driving: &[LipOpenScalar]) -> Result<Vec<f64>> {
    let values: Vec<f64> = driving.iter().map(|c| c.0).collect();
    relative_scalar(source.0, &values)
}

fn relative_scalar(source: f64, driving: &[f64]) -> Result<Vec<f64>> {
    let Some(&first) = driving.first() else {
        return Ok(Vec::new());
    };
    if !(first > 0.0) || !first.is_finite() {
        return Err(Error::DegenerateDriving(format!(
            "frame-0 condition must be positive, got {first}"
        )));
    }
    Ok(driving
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 { source } else { source * (v / first) })
        .collect())
}

struct RatioRule {
    ix: ApertureIndices,
}

fn ratio_row(row: &[f64], ix: ApertureIndices) -> (f64, [f64; 2], [f64; 2]) {
    let xy = |i: usize| [row[3 * i], row[3 * i + 1]];
    let (a, b) = (xy(ix.left_corner), xy(ix.right_corner));
    let (u, l) = (xy(ix.upper), xy(ix.lower));
    let d = [b[0] - a[0], b[1] - a[1]];
    let v = [u[0] - l[0], u[1] - l[1]];
    (d[0] * v[1] - d[1] * v[0], d, v)
}

impl CustomOp for RatioRule {
    fn name(&self) -> &'static str {
        "aperture_ratio"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        _needs_grad: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let mut grad = Tensor::zeros(x.shape());
        let ix = self.ix;
        for (b, (row, g_row)) in x
            .data()
            .chunks(KEYPOINT_DIM)
            .zip(grad.data_mut().chunks_mut(KEYPOINT_DIM))
            .enumerate()
        {
            let (cross, d, v) = ratio_row(row, ix);
            let go = grad_output.data()[b];
            if cross <= 0.0 || go == 0.0 {
                continue;
            }
            let n = d[0] * d[0] + d[1] * d[1];
            let gv = [-d[1] / n, d[0] / n];
            let gd = [
                (v[1] * n - 2.0 * cross * d[0]) / (n * n),
                (-v[0] * n - 2.0 * cross * d[1]) / (n * n),
            ];
            for c in 0..2 {
                g_row[3 * ix.upper + c] += go * gv[c];
                g_row[3 * ix.lower + c] -= go * gv[c];
                g_row[3 * ix.right_corner + c] += go * gd[c];
                g_row[3 * ix.left_corner + c] -= go * gd[c];
            }
        }
        vec![Some(grad)]
    }
}

/// Differentiable aperture ratio of every 63-wide row of `kp` (shape `[63]`
/// or `[B, 63]`); the result has shape `[B]`.
pub fn aperture_ratio_graph(g: &mut Graph, kp: Var, ix: ApertureIndices) -> Result<Var> {
    let x = g.value(kp);
    if x.is_empty() || x.len() % KEYPOINT_DIM != 0 {
        return Err(Error::shape(format!(
            "keypoint rows must be {KEYPOINT_DIM} wide, got {:?}",
            x.shape()
        )));
    }
    let mut out = Vec::with_capacity(x.len() / KEYPOINT_DIM);
    for row in x.data().chunks(KEYPOINT_DIM) {
        let (cross, d, _) = ratio_row(row, ix);
        let n = d[0] * d[0] + d[1] * d[1];
        if !(n > 0.0) {
            return Err(Error::DegenerateGeometry(
                "aperture corners coincide".into(),
            ));
        }
        out.push(cross.max(0.0) / n);
    }
    Ok(g.custom(&[kp], Tensor::vector(out), Box::new(RatioRule { ix })))
}
