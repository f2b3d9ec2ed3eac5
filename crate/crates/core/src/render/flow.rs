//! Dense backward flow from keypoint pairs.
//!
//! Each pixel `p` blends the per-keypoint displacements `x_s,k - x_d,k` (in
//! the `xy` plane) with Gaussian weights centred on the driving keypoints and
//! normalized over `k`:
//!
//! `flow(p) = sum_k w_k(p) (x_s,k - x_d,k)`, `w_k(p) ∝ exp(-|p - x_d,k|^2 / (2 sigma^2))`.

use super::image::pixel_to_normalized;
use crate::error::{Error, Result};
use crate::motion::{KeypointSet, NUM_KEYPOINTS};
use crate::numcore::{CustomOp, Graph, Tensor, Var};

/// `H x W x 2` backward-map offsets in normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::shape(format!(
                "{height}x{width} flow needs {} values, got {}",
                height * width * 2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite flow".into()));
        }
        Ok(FlowField {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    /// Same offset at every pixel.
    pub fn uniform(height: usize, width: usize, v: [f64; 2]) -> Self {
        FlowField {
            height,
            width,
            data: (0..height * width).flat_map(|_| v).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> [f64; 2] {
        let i = (row * self.width + col) * 2;
        [self.data[i], self.data[i + 1]]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 2], self.data.clone()).expect("consistent dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [h, w, 2] = *t.shape() else {
            return Err(Error::shape(format!(
                "flow tensor must be [H, W, 2], got {:?}",
                t.shape()
            )));
        };
        FlowField::new(h, w, t.data().to_vec())
    }
}

/// Below this the separable product is recomputed in log space.
const UNDERFLOW_GUARD: f64 = 1e-250;

/// Normalized weights `w_k(p)`, laid out `[H * W, K]`.
pub fn flow_weights(driving: &KeypointSet, height: usize, width: usize, sigma: f64) -> Result<Vec<f64>> {
    check_args(driving, height, width, sigma)?;
    Ok(compute_weights(&driving.flatten(), height, width, sigma))
}

fn check_args(kp: &KeypointSet, height: usize, width: usize, sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    if height < 2 || width < 2 {
        return Err(Error::shape("flow grid must be at least 2x2"));
    }
    if !kp.is_finite() {
        return Err(Error::domain("non-finite keypoints"));
    }
    Ok(())
}

fn compute_weights(driving: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    const K: usize = NUM_KEYPOINTS;
    let inv = 1.0 / (2.0 * sigma * sigma);
    // exp(-(dx^2 + dy^2) inv) = exp(-dx^2 inv) exp(-dy^2 inv)
    let mut gx = vec![0.0; K * width];
    let mut gy = vec![0.0; K * height];
    for k in 0..K {
        let (cx, cy) = (driving[3 * k], driving[3 * k + 1]);
        for c in 0..width {
            let (x, _) = pixel_to_normalized(0, c, height, width);
            gx[k * width + c] = (-(x - cx) * (x - cx) * inv).exp();
        }
        for r in 0..height {
            let (_, y) = pixel_to_normalized(r, 0, height, width);
            gy[k * height + r] = (-(y - cy) * (y - cy) * inv).exp();
        }
    }

    let mut weights = vec![0.0; height * width * K];
    for r in 0..height {
        for c in 0..width {
            let w = &mut weights[(r * width + c) * K..(r * width + c + 1) * K];
            let mut total = 0.0;
            for k in 0..K {
                w[k] = gx[k * width + c] * gy[k * height + r];
                total += w[k];
            }
            if total < UNDERFLOW_GUARD {
                let (x, y) = pixel_to_normalized(r, c, height, width);
                let mut logits = [0.0; K];
                for k in 0..K {
                    let dx = x - driving[3 * k];
                    let dy = y - driving[3 * k + 1];
                    logits[k] = -(dx * dx + dy * dy) * inv;
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                total = 0.0;
                for k in 0..K {
                    w[k] = (logits[k] - m).exp();
                    total += w[k];
                }
            }
            for v in w.iter_mut() {
                *v /= total;
            }
        }
    }
    weights
}

/// `sum_k w_k d_k`, evaluated as `d_0 + sum_k w_k (d_k - d_0)`: the same
/// value since the weights sum to one, but exact when all displacements are
/// equal.
fn blend(source: &[f64], driving: &[f64], weights: &[f64], pixels: usize) -> Vec<f64> {
    const K: usize = NUM_KEYPOINTS;
    let disp: Vec<[f64; 2]> = (0..K)
        .map(|k| {
            [
                source[3 * k] - driving[3 * k],
                source[3 * k + 1] - driving[3 * k + 1],
            ]
        })
        .collect();
    let base = disp[0];
    let rel: Vec<[f64; 2]> = disp.iter().map(|d| [d[0] - base[0], d[1] - base[1]]).collect();
    let mut flow = vec![0.0; pixels * 2];
    for p in 0..pixels {
        let w = &weights[p * K..(p + 1) * K];
        let (mut fx, mut fy) = (0.0, 0.0);
        for k in 0..K {
            fx += w[k] * rel[k][0];
            fy += w[k] * rel[k][1];
        }
        flow[2 * p] = base[0] + fx;
        flow[2 * p + 1] = base[1] + fy;
    }
    flow
}

/// Backward-map flow carrying driving keypoints onto source keypoints.
pub fn keypoint_flow(
    source: &KeypointSet,
    driving: &KeypointSet,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<FlowField> {
    check_args(source, height, width, sigma)?;
    check_args(driving, height, width, sigma)?;
    let d = driving.flatten();
    let weights = compute_weights(&d, height, width, sigma);
    let flow = blend(&source.flatten(), &d, &weights, height * width);
    FlowField::new(height, width, flow)
}

struct FlowRule {
    height: usize,
    width: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl CustomOp for FlowRule {
    fn name(&self) -> &'static str {
        "keypoint_flow"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>> {
        const K: usize = NUM_KEYPOINTS;
        let (src, drv) = (inputs[0].data(), inputs[1].data());
        let disp: Vec<[f64; 2]> = (0..K)
            .map(|k| [src[3 * k] - drv[3 * k], src[3 * k + 1] - drv[3 * k + 1]])
            .collect();
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let mut g_disp = vec![[0.0; 2]; K];
        let mut g_centre = vec![[0.0; 2]; K];
        let (go, out) = (grad_output.data(), output.data());
        for r in 0..self.height {
            for c in 0..self.width {
                let p = r * self.width + c;
                let g = [go[2 * p], go[2 * p + 1]];
                if g[0] == 0.0 && g[1] == 0.0 {
                    continue;
                }
                let (x, y) = pixel_to_normalized(r, c, self.height, self.width);
                let g_dot_flow = g[0] * out[2 * p] + g[1] * out[2 * p + 1];
                let w = &self.weights[p * K..(p + 1) * K];
                for k in 0..K {
                    g_disp[k][0] += w[k] * g[0];
                    g_disp[k][1] += w[k] * g[1];
                    // softmax over log-weights -|p - c_k|^2 / (2 sigma^2)
                    let u = g[0] * disp[k][0] + g[1] * disp[k][1];
                    let coeff = w[k] * (u - g_dot_flow) * inv_s2;
                    g_centre[k][0] += coeff * (x - drv[3 * k]);
                    g_centre[k][1] += coeff * (y - drv[3 * k + 1]);
                }
            }
        }
        let mut gs = Tensor::zeros(inputs[0].shape());
        let mut gd = Tensor::zeros(inputs[1].shape());
        for k in 0..K {
            for a in 0..2 {
                gs.data_mut()[3 * k + a] = g_disp[k][a];
                gd.data_mut()[3 * k + a] = g_centre[k][a] - g_disp[k][a];
            }
        }
        vec![needs_grad[0].then_some(gs), needs_grad[1].then_some(gd)]
    }
}

/// Differentiable [`keypoint_flow`]. `source` and `driving` hold `K x 3`
/// values (any shape with 63 entries); the result is `[H, W, 2]`.
pub fn keypoint_flow_graph(
    g: &mut Graph,
    source: Var,
    driving: Var,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<Var> {
    let s = KeypointSet::from_flat(g.value(source).data())?;
    let d = KeypointSet::from_flat(g.value(driving).data())?;
    check_args(&s, height, width, sigma)?;
    check_args(&d, height, width, sigma)?;
    let weights = compute_weights(g.value(driving).data(), height, width, sigma);
    let flow = blend(g.value(source).data(), g.value(driving).data(), &weights, height * width);
    let out = Tensor::new(vec![height, width, 2], flow)?;
    Ok(g.custom(
        &[source, driving],
        out,
        Box::new(FlowRule {
            height,
            width,
            sigma,
            weights,
        }),
    ))
}
