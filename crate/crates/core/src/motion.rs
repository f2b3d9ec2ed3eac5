//! Keypoint motion: rotations, motion parameters and every keypoint transform.
//!
//! Keypoints are row vectors and rotations act from the right, `x R`. The
//! normalized frame has `x` to the right, `y` up and `z` toward the viewer.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Number of implicit keypoints.
pub const NUM_KEYPOINTS: usize = 21;

/// Length of a flattened [`KeypointSet`].
pub const KEYPOINT_DIM: usize = NUM_KEYPOINTS * 3;

/// Tolerance for `|R^T R - I|_inf` accepted as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// 3x3 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3(std::array::from_fn(|i| std::array::from_fn(|j| m[j][i])))
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `|M^T M - I|_inf`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose() * *self;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((p.0[i][j] - target).abs());
            }
        }
        err
    }

    pub fn is_rotation(&self) -> bool {
        self.orthonormality_error() < ROTATION_TOLERANCE && self.det() > 0.0
    }

    /// Row vector times matrix, `v M`.
    pub fn apply_row(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        std::array::from_fn(|j| v[0] * m[0][j] + v[1] * m[1][j] + v[2] * m[2][j])
    }

    pub fn flatten(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

impl Mul for Mat3 {
    type Output = Mat3;

    fn mul(self, rhs: Mat3) -> Mat3 {
        let (a, b) = (&self.0, &rhs.0);
        Mat3(std::array::from_fn(|i| {
            std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j])
        }))
    }
}

/// Head pose angles in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EulerAngles {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(pitch: f64, yaw: f64, roll: f64) -> Self {
        EulerAngles { pitch, yaw, roll }
    }

    /// Wraps every angle into `[-180, 180)`.
    pub fn canonical(self) -> Self {
        let wrap = |a: f64| (a + 180.0).rem_euclid(360.0) - 180.0;
        EulerAngles {
            pitch: wrap(self.pitch),
            yaw: wrap(self.yaw),
            roll: wrap(self.roll),
        }
    }
}

/// `R = Rz(roll) Ry(yaw) Rx(pitch)`.
///
/// The result is re-orthonormalized so `|R^T R - I|_inf` stays at rounding
/// level for any input angles.
pub fn euler_to_rotation(angles: EulerAngles) -> Mat3 {
    let (sp, cp) = angles.pitch.to_radians().sin_cos();
    let (sy, cy) = angles.yaw.to_radians().sin_cos();
    let (sr, cr) = angles.roll.to_radians().sin_cos();
    let rx = Mat3([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]]);
    let ry = Mat3([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]]);
    let rz = Mat3([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]]);
    orthonormalize(rz * ry * rx)
}

/// Gram-Schmidt on the rows, third row rebuilt as the cross product.
fn orthonormalize(m: Mat3) -> Mat3 {
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let scale = |v: [f64; 3], s: f64| [v[0] * s, v[1] * s, v[2] * s];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let r0 = scale(m.0[0], 1.0 / norm(m.0[0]));
    let d = dot(m.0[1], r0);
    let r1 = [m.0[1][0] - d * r0[0], m.0[1][1] - d * r0[1], m.0[1][2] - d * r0[2]];
    let r1 = scale(r1, 1.0 / norm(r1));
    let r2 = [
        r0[1] * r1[2] - r0[2] * r1[1],
        r0[2] * r1[0] - r0[0] * r1[2],
        r0[0] * r1[1] - r0[1] * r1[0],
    ];
    Mat3([r0, r1, r2])
}

/// `K x 3` points. Also used for per-keypoint offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointSet(pub [[f64; 3]; NUM_KEYPOINTS]);

impl Default for KeypointSet {
    fn default() -> Self {
        KeypointSet::zeros()
    }
}

impl KeypointSet {
    pub fn zeros() -> Self {
        KeypointSet([[0.0; 3]; NUM_KEYPOINTS])
    }

    /// Builds from a keypoint-major, coordinate-minor flat slice.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != KEYPOINT_DIM {
            return Err(Error::shape(format!(
                "keypoint set needs {KEYPOINT_DIM} values, got {}",
                flat.len()
            )));
        }
        Ok(KeypointSet(std::array::from_fn(|k| {
            [flat[3 * k], flat[3 * k + 1], flat[3 * k + 2]]
        })))
    }

    /// `(k0x, k0y, k0z, k1x, ...)`.
    pub fn flatten(&self) -> [f64; KEYPOINT_DIM] {
        std::array::from_fn(|i| self.0[i / 3][i % 3])
    }

    pub fn points(&self) -> &[[f64; 3]; NUM_KEYPOINTS] {
        &self.0
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        KeypointSet(std::array::from_fn(|k| f(self.0[k])))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|p| [p[0] * s, p[1] * s, p[2] * s])
    }

    pub fn translate(&self, t: [f64; 3]) -> Self {
        self.map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
    }

    /// Every row multiplied on the right by `r`.
    pub fn rotate(&self, r: &Mat3) -> Self {
        self.map(|p| r.apply_row(p))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// `max |a - b|` over all entries.
    pub fn max_abs_diff(&self, other: &KeypointSet) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Sum of absolute entries.
    pub fn l1(&self) -> f64 {
        self.0.iter().flatten().map(|v| v.abs()).sum()
    }
}

impl Index<usize> for KeypointSet {
    type Output = [f64; 3];

    fn index(&self, k: usize) -> &[f64; 3] {
        &self.0[k]
    }
}

impl IndexMut<usize> for KeypointSet {
    fn index_mut(&mut self, k: usize) -> &mut [f64; 3] {
        &mut self.0[k]
    }
}

impl Add for KeypointSet {
    type Output = KeypointSet;

    fn add(self, rhs: KeypointSet) -> KeypointSet {
        KeypointSet(std::array::from_fn(|k| {
            std::array::from_fn(|c| self.0[k][c] + rhs.0[k][c])
        }))
    }
}

impl Sub for KeypointSet {
    type Output = KeypointSet;

    fn sub(self, rhs: KeypointSet) -> KeypointSet {
        KeypointSet(std::array::from_fn(|k| {
            std::array::from_fn(|c| self.0[k][c] - rhs.0[k][c])
        }))
    }
}

/// Per-image motion decomposition: scale, rotation, expression deformation
/// and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionParams {
    pub scale: f64,
    pub rotation: Mat3,
    pub expression: KeypointSet,
    pub translation: [f64; 3],
}

impl MotionParams {
    /// Validates `scale > 0` and that `rotation` is a proper rotation.
    pub fn new(
        scale: f64,
        rotation: Mat3,
        expression: KeypointSet,
        translation: [f64; 3],
    ) -> Result<Self> {
        let p = MotionParams {
            scale,
            rotation,
            expression,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        MotionParams {
            scale: 1.0,
            rotation: Mat3::IDENTITY,
            expression: KeypointSet::zeros(),
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::domain(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !self.rotation.is_rotation() {
            return Err(Error::domain(format!(
                "not a rotation: orthonormality error {:e}, det {}",
                self.rotation.orthonormality_error(),
                self.rotation.det()
            )));
        }
        if !self.expression.is_finite() || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("non-finite motion parameters"));
        }
        Ok(())
    }
}

/// `x = x_c R + delta + t`: the transform without a scale factor.
pub fn transform_legacy(
    canonical: &KeypointSet,
    rotation: &Mat3,
    expression: &KeypointSet,
    translation: [f64; 3],
) -> KeypointSet {
    KeypointSet(std::array::from_fn(|k| {
        let r = rotation.apply_row(canonical[k]);
        std::array::from_fn(|c| r[c] + expression[k][c] + translation[c])
    }))
}

/// `x = s (x_c R + delta) + t`.
pub fn transform_scaled(canonical: &KeypointSet, p: &MotionParams) -> Result<KeypointSet> {
    check_scale(p.scale)?;
    Ok(KeypointSet(std::array::from_fn(|k| {
        let r = p.rotation.apply_row(canonical[k]);
        std::array::from_fn(|c| p.scale * (r[c] + p.expression[k][c]) + p.translation[c])
    })))
}

/// Scale-orthographic variant `x = s ((x_c + delta) R) + t`, in which the
/// expression deformation is rotated with the head.
pub fn transform_orthographic(canonical: &KeypointSet, p: &MotionParams) -> Result<KeypointSet> {
    check_scale(p.scale)?;
    Ok(KeypointSet(std::array::from_fn(|k| {
        let v: [f64; 3] = std::array::from_fn(|c| canonical[k][c] + p.expression[k][c]);
        let r = p.rotation.apply_row(v);
        std::array::from_fn(|c| p.scale * r[c] + p.translation[c])
    })))
}

fn check_scale(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("scale must be positive, got {s}")))
    }
}

/// Transfers driving frame `i` onto the source relative to driving frame 0:
///
/// `x_d,i = s_s (s_d,i / s_d,0) (x_c,s (R_d,i R_d,0^-1 R_s) + (delta_s + delta_d,i - delta_d,0)) + (t_s + t_d,i - t_d,0)`
pub fn relative_driving(
    canonical: &KeypointSet,
    source: &MotionParams,
    driving: &MotionParams,
    driving_first: &MotionParams,
) -> Result<KeypointSet> {
    relative_with_expression(
        canonical,
        source,
        driving,
        driving_first,
        &driving.expression,
    )
}

/// Video-editing transform: per-frame source parameters, and the driving
/// expression averaged over frames `i` and `i + 1`.
pub fn video_edit_driving(
    canonical: &KeypointSet,
    source: &MotionParams,
    driving: &MotionParams,
    driving_next: &MotionParams,
    driving_first: &MotionParams,
) -> Result<KeypointSet> {
    let smoothed = KeypointSet(std::array::from_fn(|k| {
        std::array::from_fn(|c| 0.5 * (driving.expression[k][c] + driving_next.expression[k][c]))
    }));
    relative_with_expression(canonical, source, driving, driving_first, &smoothed)
}

/// [`video_edit_driving`] over whole sequences. The last frame averages its
/// expression with itself.
pub fn video_edit_sequence(
    canonicals: &[KeypointSet],
    sources: &[MotionParams],
    driving: &[MotionParams],
) -> Result<Vec<KeypointSet>> {
    if canonicals.len() != sources.len() || sources.len() != driving.len() {
        return Err(Error::shape(format!(
            "video edit needs equal lengths, got {} canonicals, {} sources, {} driving",
            canonicals.len(),
            sources.len(),
            driving.len()
        )));
    }
    let Some(first) = driving.first() else {
        return Ok(Vec::new());
    };
    (0..driving.len())
        .map(|i| {
            let next = driving.get(i + 1).unwrap_or(&driving[i]);
            video_edit_driving(&canonicals[i], &sources[i], &driving[i], next, first)
        })
        .collect()
}

fn relative_with_expression(
    canonical: &KeypointSet,
    source: &MotionParams,
    driving: &MotionParams,
    driving_first: &MotionParams,
    driving_expression: &KeypointSet,
) -> Result<KeypointSet> {
    check_scale(source.scale)?;
    if !(driving_first.scale > 0.0) {
        return Err(Error::domain(format!(
            "frame-0 driving scale must be positive, got {}",
            driving_first.scale
        )));
    }
    let scale = source.scale * (driving.scale / driving_first.scale);
    let rotation = driving.rotation * driving_first.rotation.transpose() * source.rotation;
    let t: [f64; 3] = std::array::from_fn(|c| {
        source.translation[c] + driving.translation[c] - driving_first.translation[c]
    });
    Ok(KeypointSet(std::array::from_fn(|k| {
        let r = rotation.apply_row(canonical[k]);
        std::array::from_fn(|c| {
            let delta = source.expression[k][c] + driving_expression[k][c]
                - driving_first.expression[k][c];
            scale * (r[c] + delta) + t[c]
        })
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, v: [f64; 3]) -> KeypointSet {
        let mut s = KeypointSet::zeros();
        s[k] = v;
        s
    }

    fn assert_close(a: [f64; 3], b: [f64; 3], tol: f64) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(euler_to_rotation(EulerAngles::default()), Mat3::IDENTITY);
    }

    #[test]
    fn yaw_ninety_sends_x_to_z() {
        let r = euler_to_rotation(EulerAngles::new(0.0, 90.0, 0.0));
        assert_close(r.apply_row([1.0, 0.0, 0.0]), [0.0, 0.0, 1.0], 1e-15);
    }

    #[test]
    fn legacy_direct_arithmetic() {
        let xc = row(0, [1.0, 0.0, 0.0]);
        let delta = row(0, [0.1, 0.0, 0.0]);
        let x = transform_legacy(&xc, &Mat3::IDENTITY, &delta, [0.0, 0.0, 3.0]);
        assert_close(x[0], [1.1, 0.0, 3.0], 1e-15);
        assert_close(x[5], [0.0, 0.0, 3.0], 0.0 + 1e-300);
    }

    #[test]
    fn scaled_direct_arithmetic() {
        let xc = row(0, [1.0, 0.0, 0.0]);
        let p = MotionParams {
            scale: 2.0,
            expression: row(0, [0.1, 0.0, 0.0]),
            translation: [0.0, 0.0, 3.0],
            ..MotionParams::identity()
        };
        let x = transform_scaled(&xc, &p).unwrap();
        assert_close(x[0], [2.2, 0.0, 3.0], 1e-15);
    }

    #[test]
    fn identity_params_reproduce_canonical() {
        let xc = row(3, [0.2, -0.4, 0.9]);
        assert_eq!(transform_scaled(&xc, &MotionParams::identity()).unwrap(), xc);
    }

    #[test]
    fn non_positive_scale_is_domain_error() {
        let p = MotionParams {
            scale: 0.0,
            ..MotionParams::identity()
        };
        let xc = KeypointSet::zeros();
        assert!(matches!(transform_scaled(&xc, &p), Err(Error::Domain(_))));
        assert!(matches!(transform_orthographic(&xc, &p), Err(Error::Domain(_))));
        assert!(MotionParams::new(-1.0, Mat3::IDENTITY, xc, [0.0; 3]).is_err());
    }

    #[test]
    fn validation_rejects_reflections() {
        let flip = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]);
        assert!(MotionParams::new(1.0, flip, KeypointSet::zeros(), [0.0; 3]).is_err());
    }

    #[test]
    fn pure_translation_passthrough() {
        let xc = row(2, [0.3, 0.1, -0.2]);
        let src = MotionParams {
            scale: 1.3,
            rotation: euler_to_rotation(EulerAngles::new(5.0, -10.0, 3.0)),
            ..MotionParams::identity()
        };
        let d0 = MotionParams {
            scale: 0.8,
            rotation: euler_to_rotation(EulerAngles::new(1.0, 2.0, 3.0)),
            translation: [0.2, 0.1, 0.0],
            ..MotionParams::identity()
        };
        let di = MotionParams {
            translation: [0.3, 0.1, 0.0],
            ..d0
        };
        let xs = transform_scaled(&xc, &src).unwrap();
        let xd = relative_driving(&xc, &src, &di, &d0).unwrap();
        for k in 0..NUM_KEYPOINTS {
            assert_close(xd[k], [xs[k][0] + 0.1, xs[k][1], xs[k][2]], 1e-12);
        }
    }

    #[test]
    fn zero_first_frame_scale_rejected() {
        let d0 = MotionParams {
            scale: 0.0,
            ..MotionParams::identity()
        };
        let r = relative_driving(
            &KeypointSet::zeros(),
            &MotionParams::identity(),
            &MotionParams::identity(),
            &d0,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn canonical_angles_wrap() {
        let a = EulerAngles::new(190.0, -180.0, 540.0).canonical();
        assert_eq!(a, EulerAngles::new(-170.0, -180.0, -180.0));
    }
}
