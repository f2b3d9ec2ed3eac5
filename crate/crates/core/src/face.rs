//! Synthetic face template: keypoint layout, expression basis, identity
//! sampling and a procedural rasterizer.
//!
//! Layout of the 21 keypoints (normalized frame, `y` up):
//!
//! | index | point |
//! |-------|-------|
//! | 0-3   | left eye: left corner, right corner, upper lid, lower lid |
//! | 4-7   | right eye: left corner, right corner, upper lid, lower lid |
//! | 8, 9  | brows |
//! | 10, 11| nose bridge, nose tip |
//! | 12-15 | mouth: left corner, right corner, upper inner lip, lower inner lip |
//! | 16    | chin |
//! | 17, 18| jaw |
//! | 19, 20| shoulders |
//!
//! Eyes and lips are closed in the canonical layout; openness comes from the
//! expression basis.

use rand::Rng;

use crate::conditions::ApertureIndices;
use crate::motion::{KeypointSet, NUM_KEYPOINTS};
use crate::render::ImageGrid;
use crate::error::Result;

/// Bumped whenever geometry below changes; masks and conditions depend on it.
pub const TEMPLATE_VERSION: u32 = 1;

pub const LEFT_EYE: ApertureIndices = ApertureIndices {
    left_corner: 0,
    right_corner: 1,
    upper: 2,
    lower: 3,
};
pub const RIGHT_EYE: ApertureIndices = ApertureIndices {
    left_corner: 4,
    right_corner: 5,
    upper: 6,
    lower: 7,
};
pub const MOUTH: ApertureIndices = ApertureIndices {
    left_corner: 12,
    right_corner: 13,
    upper: 14,
    lower: 15,
};
pub const BROWS: [usize; 2] = [8, 9];
pub const NOSE_TIP: usize = 11;
pub const CHIN: usize = 16;
pub const JAW: [usize; 2] = [17, 18];
pub const SHOULDERS: [usize; 2] = [19, 20];

/// Keypoints supervised by the landmark-guided loss: the eight eye points and
/// the two inner-lip points.
pub const GUIDE_INDICES: [usize; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 14, 15];

const CANONICAL: [[f64; 3]; NUM_KEYPOINTS] = [
    [-0.42, 0.25, 0.02],
    [-0.18, 0.25, 0.06],
    [-0.30, 0.25, 0.08],
    [-0.30, 0.25, 0.08],
    [0.18, 0.25, 0.06],
    [0.42, 0.25, 0.02],
    [0.30, 0.25, 0.08],
    [0.30, 0.25, 0.08],
    [-0.30, 0.47, 0.08],
    [0.30, 0.47, 0.08],
    [0.00, 0.22, 0.15],
    [0.00, 0.04, 0.25],
    [-0.20, -0.25, 0.10],
    [0.20, -0.25, 0.10],
    [0.00, -0.25, 0.12],
    [0.00, -0.25, 0.12],
    [0.00, -0.52, 0.05],
    [-0.50, -0.05, -0.10],
    [0.50, -0.05, -0.10],
    [-0.62, -0.85, -0.20],
    [0.62, -0.85, -0.20],
];

/// Expression coordinates mapped linearly onto keypoint offsets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExpressionParams {
    /// Lid gap as a fraction of eye width.
    pub eyes_open: f64,
    /// Inner-lip gap as a fraction of mouth width.
    pub lip_open: f64,
    /// Vertical brow raise.
    pub brow: f64,
}

/// Geometry of the region masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskGeometry {
    /// Rows with `y` below this line form the shoulder band.
    pub shoulder_line: f64,
    /// Vertical padding of the eye and lip bands.
    pub pad: f64,
    /// Half-height, as a fraction of aperture width, reserved around the
    /// aperture centre so a fully opened eye or mouth stays inside its band.
    pub open_reserve: f64,
}

/// Shades of the rasterized face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub background: f64,
    pub torso: f64,
    pub neck: f64,
    pub skin: f64,
    pub brow: f64,
    pub eye: f64,
    pub mouth: f64,
    pub nose: f64,
}

/// Face template shared by every synthetic identity.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceTemplate {
    pub version: u32,
    pub canonical: KeypointSet,
    pub masks: MaskGeometry,
    pub palette: Palette,
}

impl Default for FaceTemplate {
    fn default() -> Self {
        FaceTemplate {
            version: TEMPLATE_VERSION,
            canonical: KeypointSet(CANONICAL),
            masks: MaskGeometry {
                shoulder_line: -0.6,
                pad: 0.08,
                open_reserve: 0.4,
            },
            palette: Palette {
                background: 0.15,
                torso: 0.45,
                neck: 0.62,
                skin: 0.82,
                brow: 0.3,
                eye: 0.08,
                mouth: 0.25,
                nose: 0.68,
            },
        }
    }
}

fn xy_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl FaceTemplate {
    /// Keypoint offsets for `params` on an identity with canonical points
    /// `canonical`. Linear in `params`.
    pub fn expression_offsets(&self, canonical: &KeypointSet, params: ExpressionParams) -> KeypointSet {
        let mut delta = KeypointSet::zeros();
        for eye in [LEFT_EYE, RIGHT_EYE] {
            let w = xy_dist(canonical[eye.left_corner], canonical[eye.right_corner]);
            delta[eye.upper][1] += 0.5 * params.eyes_open * w;
            delta[eye.lower][1] -= 0.5 * params.eyes_open * w;
        }
        let w = xy_dist(canonical[MOUTH.left_corner], canonical[MOUTH.right_corner]);
        delta[MOUTH.upper][1] += 0.5 * params.lip_open * w;
        delta[MOUTH.lower][1] -= 0.5 * params.lip_open * w;
        for b in BROWS {
            delta[b][1] += params.brow;
        }
        delta
    }

    /// Inverse of [`FaceTemplate::expression_offsets`] on its range.
    pub fn expression_params(&self, canonical: &KeypointSet, delta: &KeypointSet) -> ExpressionParams {
        let eye = LEFT_EYE;
        let w = xy_dist(canonical[eye.left_corner], canonical[eye.right_corner]);
        let eyes_open = (delta[eye.upper][1] - delta[eye.lower][1]) / w;
        let w = xy_dist(canonical[MOUTH.left_corner], canonical[MOUTH.right_corner]);
        let lip_open = (delta[MOUTH.upper][1] - delta[MOUTH.lower][1]) / w;
        ExpressionParams {
            eyes_open,
            lip_open,
            brow: delta[BROWS[0]][1],
        }
    }

    /// A new identity: the template with perturbed proportions.
    pub fn sample_identity<R: Rng + ?Sized>(&self, rng: &mut R) -> KeypointSet {
        let mut kp = self.canonical;
        let face_scale = rng.random_range(0.92..1.08);
        let eye_scale = rng.random_range(0.8..1.2);
        let eye_shift = rng.random_range(-0.03..0.03);
        let mouth_scale = rng.random_range(0.85..1.15);
        let shoulder_shift = rng.random_range(-0.06..0.06);

        for (side, eye) in [(-1.0, LEFT_EYE), (1.0, RIGHT_EYE)] {
            let centre = 0.5 * (kp[eye.left_corner][0] + kp[eye.right_corner][0]);
            for i in [eye.left_corner, eye.right_corner, eye.upper, eye.lower] {
                kp[i][0] = centre + side * eye_shift + eye_scale * (kp[i][0] - centre);
            }
        }
        for i in [MOUTH.left_corner, MOUTH.right_corner] {
            kp[i][0] *= mouth_scale;
        }
        for (side, i) in [(-1.0, SHOULDERS[0]), (1.0, SHOULDERS[1])] {
            kp[i][0] += side * shoulder_shift;
        }
        for (i, p) in kp.0.iter_mut().enumerate() {
            if SHOULDERS.contains(&i) {
                continue;
            }
            p[0] *= face_scale;
            p[1] *= face_scale;
        }
        for k in 0..NUM_KEYPOINTS {
            let j: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.01..0.01));
            for c in 0..3 {
                kp[k][c] += j[c];
            }
        }
        // Keep eyes and lips exactly closed in the canonical frame.
        for a in [LEFT_EYE, RIGHT_EYE, MOUTH] {
            kp[a.lower] = kp[a.upper];
        }
        kp
    }

    /// Rasterizes a face whose features sit at the `xy` of `kp`.
    pub fn rasterize(&self, kp: &KeypointSet, size: usize, channels: usize) -> Result<ImageGrid> {
        let pal = &self.palette;
        let px = 2.0 / (size - 1) as f64;
        let shapes = FaceShapes::new(kp);
        let tint = |ch: usize, v: f64| -> f64 {
            // Mild colour so three-channel renders are not grey.
            match (channels, ch) {
                (3, 0) => (v * 1.05).min(1.0),
                (3, 2) => v * 0.92,
                _ => v,
            }
        };
        ImageGrid::from_fn(size, size, channels, |r, c, ch| {
            let (x, y) = crate::render::pixel_to_normalized(r, c, size, size);
            let mut v = pal.background;
            let mut paint = |sd: f64, shade: f64| {
                let a = coverage(sd, px);
                v = v * (1.0 - a) + shade * a;
            };
            paint(shapes.torso.sd(x, y), pal.torso);
            paint(shapes.neck.sd(x, y), pal.neck);
            paint(shapes.face.sd(x, y), pal.skin);
            for b in &shapes.brows {
                paint(b.sd(x, y), pal.brow);
            }
            paint(shapes.nose.sd(x, y), pal.nose);
            for e in &shapes.eyes {
                paint(e.sd(x, y), pal.eye);
            }
            paint(shapes.mouth.sd(x, y), pal.mouth);
            tint(ch, v)
        })
    }
}

/// Smooth edge, roughly one pixel wide.
fn coverage(sd: f64, px: f64) -> f64 {
    1.0 / (1.0 + (sd / (0.6 * px)).exp())
}

const FACE_LIFT: f64 = 0.22;
const FACE_MARGIN: f64 = 0.1;
const FACE_POWER: f64 = 2.6;

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    power: f64,
}

impl Ellipse {
    fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Self {
        Ellipse {
            cx,
            cy,
            a: a.max(1e-6),
            b: b.max(1e-6),
            cos: angle.cos(),
            sin: angle.sin(),
            power: 2.0,
        }
    }

    /// Superellipse with exponent `power`; boxier than an ellipse for `power > 2`.
    fn with_power(self, power: f64) -> Self {
        Ellipse { power, ..self }
    }

    /// Approximate signed distance, negative inside.
    fn sd(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let k = ((u / self.a).abs().powf(self.power) + (v / self.b).abs().powf(self.power))
            .powf(1.0 / self.power);
        (k - 1.0) * self.a.min(self.b)
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    cx: f64,
    cy: f64,
    hw: f64,
    hh: f64,
}

impl Rect {
    fn sd(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx).abs() - self.hw;
        let dy = (y - self.cy).abs() - self.hh;
        let outside = (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
        outside + dx.max(dy).min(0.0)
    }
}

struct FaceShapes {
    torso: Ellipse,
    neck: Rect,
    face: Ellipse,
    brows: [Ellipse; 2],
    nose: Ellipse,
    eyes: [Ellipse; 2],
    mouth: Ellipse,
}

impl FaceShapes {
    fn new(kp: &KeypointSet) -> Self {
        let mid = |a: [f64; 3], b: [f64; 3]| (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]));
        let angle = |a: [f64; 3], b: [f64; 3]| (b[1] - a[1]).atan2(b[0] - a[0]);

        let (sl, sr) = (kp[SHOULDERS[0]], kp[SHOULDERS[1]]);
        let (tx, ty) = mid(sl, sr);
        let torso = Ellipse::new(tx, ty, 0.5 * xy_dist(sl, sr) + 0.22, 0.42, angle(sl, sr));

        let chin = kp[CHIN];
        let neck = Rect {
            cx: 0.5 * (chin[0] + tx),
            cy: 0.5 * (chin[1] + ty),
            hw: 0.17,
            hh: 0.5 * (chin[1] - ty).abs(),
        };

        let (jl, jr) = (kp[JAW[0]], kp[JAW[1]]);
        let (fx, fy) = mid(jl, jr);
        let fy = fy + FACE_LIFT;
        let half_w = 0.5 * xy_dist(jl, jr) + FACE_MARGIN;
        let half_h = ((chin[0] - fx).powi(2) + (chin[1] - fy).powi(2)).sqrt() + 0.03;
        let face = Ellipse::new(fx, fy, half_w, half_h, angle(jl, jr)).with_power(FACE_POWER);

        let brows = BROWS.map(|b| Ellipse::new(kp[b][0], kp[b][1], 0.1, 0.025, angle(jl, jr)));
        let nose = Ellipse::new(kp[NOSE_TIP][0], kp[NOSE_TIP][1], 0.05, 0.035, 0.0);

        let aperture = |ix: ApertureIndices, min_half: f64| {
            let (l, r) = (kp[ix.left_corner], kp[ix.right_corner]);
            let (u, d) = (kp[ix.upper], kp[ix.lower]);
            let (cx, cy) = mid(l, r);
            let w = xy_dist(l, r);
            let theta = angle(l, r);
            // Gap measured perpendicular to the corner axis.
            let gap = ((u[1] - d[1]) * theta.cos() - (u[0] - d[0]) * theta.sin()).max(0.0);
            let (ox, oy) = mid(u, d);
            Ellipse::new(0.5 * (cx + ox), 0.5 * (cy + oy), 0.5 * w, 0.5 * gap + min_half, theta)
        };
        FaceShapes {
            torso,
            neck,
            face,
            brows,
            nose,
            eyes: [aperture(LEFT_EYE, 0.004), aperture(RIGHT_EYE, 0.004)],
            mouth: aperture(MOUTH, 0.012),
        }
    }
}
