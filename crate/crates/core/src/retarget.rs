//! Stitching and eyes/lip retargeting networks, and the inference dispatch
//! that combines them with the driving keypoints.
//!
//! MLP inputs are flattened keypoint-major (`k0x, k0y, k0z, k1x, ...`).

use rand::Rng;

use crate::conditions::{EyesOpenTuple, LipOpenScalar};
use crate::error::{Error, Result};
use crate::motion::{transform_scaled, KeypointSet, MotionParams, KEYPOINT_DIM};
use crate::numcore::{Mlp, Tensor};

macro_rules! weights_type {
    ($(#[$doc:meta])* $name:ident, $label:literal, [$($size:expr),+]) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Mlp);

        impl $name {
            pub const SIZES: &'static [usize] = &[$($size),+];
            pub const LABEL: &'static str = $label;

            pub fn zeros() -> Self {
                $name(Mlp::zeros(Self::SIZES))
            }

            /// Glorot-uniform weights in every layer, zero biases.
            pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
                $name(Mlp::glorot(Self::SIZES, rng))
            }

            /// Training start: [`random`](Self::random) with the output layer
            /// zeroed, so the untrained network adds no offset.
            pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
                $name(Mlp::glorot(Self::SIZES, rng).with_zero_output())
            }

            pub fn from_mlp(mlp: Mlp) -> Result<Self> {
                if mlp.sizes() != Self::SIZES {
                    return Err(Error::shape(format!(
                        "{} network must have layer sizes {:?}, got {:?}",
                        $label,
                        Self::SIZES,
                        mlp.sizes()
                    )));
                }
                Ok($name(mlp))
            }

            pub fn mlp(&self) -> &Mlp {
                &self.0
            }

            pub fn mlp_mut(&mut self) -> &mut Mlp {
                &mut self.0
            }

            pub fn into_mlp(self) -> Mlp {
                self.0
            }
        }
    };
}

weights_type!(
    /// Stitching network `S(x_s, x_d)`: 126 inputs, 63 per-keypoint deltas
    /// plus a 2D shift.
    StitchingWeights,
    "stitching",
    [126, 128, 128, 64, 65]
);
weights_type!(
    /// Eyes retargeting network: `x_s`, the source eyes tuple and the target
    /// scalar in, 63 deltas out.
    EyesRetargetWeights,
    "eyes",
    [66, 256, 256, 128, 128, 64, 63]
);
weights_type!(
    /// Lip retargeting network: `x_s`, the source lip scalar and the target
    /// scalar in, 63 deltas out.
    LipRetargetWeights,
    "lip",
    [65, 128, 128, 64, 63]
);

/// Network input for stitching: `x_s || x_d`.
pub fn stitch_input(x_s: &KeypointSet, x_d: &KeypointSet) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * KEYPOINT_DIM);
    v.extend_from_slice(&x_s.flatten());
    v.extend_from_slice(&x_d.flatten());
    v
}

/// Network input for eyes retargeting: `x_s || (left, right) || c_d`.
pub fn eyes_input(x_s: &KeypointSet, c_s: EyesOpenTuple, c_d: f64) -> Vec<f64> {
    let mut v = x_s.flatten().to_vec();
    v.extend([c_s.left, c_s.right, c_d]);
    v
}

/// Network input for lip retargeting: `x_s || c_s || c_d`.
pub fn lip_input(x_s: &KeypointSet, c_s: LipOpenScalar, c_d: f64) -> Vec<f64> {
    let mut v = x_s.flatten().to_vec();
    v.extend([c_s.0, c_d]);
    v
}

/// Raw stitching output split into per-keypoint deltas and the planar shift.
pub fn stitch_offset(
    w: &StitchingWeights,
    x_s: &KeypointSet,
    x_d: &KeypointSet,
) -> Result<(KeypointSet, [f64; 2])> {
    let out = w.mlp().forward(&stitch_input(x_s, x_d))?;
    Ok((
        KeypointSet::from_flat(&out[..KEYPOINT_DIM])?,
        [out[KEYPOINT_DIM], out[KEYPOINT_DIM + 1]],
    ))
}

/// `x_d + delta`, then `shift` added to the `x, y` of every keypoint.
pub fn apply_stitch(x_d: &KeypointSet, delta: &KeypointSet, shift: [f64; 2]) -> KeypointSet {
    (*x_d + *delta).translate([shift[0], shift[1], 0.0])
}

/// The fixed `[65, 63]` matrix `P` with `x_d + out P == apply_stitch(x_d, ..)`.
pub fn stitch_projection() -> Tensor {
    let n = KEYPOINT_DIM;
    let mut p = Tensor::zeros(&[n + 2, n]);
    let d = p.data_mut();
    for i in 0..n {
        d[i * n + i] = 1.0;
    }
    for k in 0..n / 3 {
        d[n * n + 3 * k] = 1.0;
        d[(n + 1) * n + 3 * k + 1] = 1.0;
    }
    p
}

pub fn eyes_offset(
    w: &EyesRetargetWeights,
    x_s: &KeypointSet,
    c_s: EyesOpenTuple,
    c_d: f64,
) -> Result<KeypointSet> {
    KeypointSet::from_flat(&w.mlp().forward(&eyes_input(x_s, c_s, c_d))?)
}

pub fn lip_offset(
    w: &LipRetargetWeights,
    x_s: &KeypointSet,
    c_s: LipOpenScalar,
    c_d: f64,
) -> Result<KeypointSet> {
    KeypointSet::from_flat(&w.mlp().forward(&lip_input(x_s, c_s, c_d))?)
}

/// Indicator switches for the inference dispatch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RetargetFlags {
    pub stitch: bool,
    pub eyes: bool,
    pub lip: bool,
}

impl RetargetFlags {
    pub const NONE: RetargetFlags = RetargetFlags {
        stitch: false,
        eyes: false,
        lip: false,
    };
}

/// Whichever trained networks are available.
#[derive(Clone, Debug, Default)]
pub struct RetargetModels {
    pub stitching: Option<StitchingWeights>,
    pub eyes: Option<EyesRetargetWeights>,
    pub lip: Option<LipRetargetWeights>,
}

impl RetargetModels {
    /// All three networks with zero weights.
    pub fn zeros() -> Self {
        RetargetModels {
            stitching: Some(StitchingWeights::zeros()),
            eyes: Some(EyesRetargetWeights::zeros()),
            lip: Some(LipRetargetWeights::zeros()),
        }
    }
}

/// Source and driving conditions for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameConditions {
    pub eyes_source: EyesOpenTuple,
    pub eyes_driving: f64,
    pub lip_source: LipOpenScalar,
    pub lip_driving: f64,
}

fn require<'a, T>(w: &'a Option<T>, what: &str) -> Result<&'a T> {
    w.as_ref()
        .ok_or_else(|| Error::config(format!("{what} is enabled but no {what} weights are loaded")))
}

/// Final driving keypoints for one frame.
///
/// - no flags: `x_d,i`
/// - stitching only: `x_d,i + S(x_s, x_d,i)`
/// - eyes and/or lip: `x_s + Δ_eyes + Δ_lip` for the enabled terms, followed by
///   `+ S(x_s, x')` when stitching is also enabled
pub fn infer_keypoints(
    flags: RetargetFlags,
    x_s: &KeypointSet,
    x_d: &KeypointSet,
    models: &RetargetModels,
    cond: &FrameConditions,
) -> Result<KeypointSet> {
    let stitch = |base: &KeypointSet| -> Result<KeypointSet> {
        let w = require(&models.stitching, "stitching")?;
        let (delta, shift) = stitch_offset(w, x_s, base)?;
        Ok(apply_stitch(base, &delta, shift))
    };
    if !flags.eyes && !flags.lip {
        return if flags.stitch { stitch(x_d) } else { Ok(*x_d) };
    }
    let mut x = *x_s;
    if flags.eyes {
        let w = require(&models.eyes, "eyes retargeting")?;
        x = x + eyes_offset(w, x_s, cond.eyes_source, cond.eyes_driving)?;
    }
    if flags.lip {
        let w = require(&models.lip, "lip retargeting")?;
        x = x + lip_offset(w, x_s, cond.lip_source, cond.lip_driving)?;
    }
    if flags.stitch {
        x = stitch(&x)?;
    }
    Ok(x)
}

/// Another identity's motion applied to the source canonical keypoints.
pub fn cross_id_driving(canonical: &KeypointSet, other: &MotionParams) -> Result<KeypointSet> {
    transform_scaled(canonical, other)
}
