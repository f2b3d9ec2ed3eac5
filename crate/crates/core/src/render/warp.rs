use super::flow::{keypoint_flow, keypoint_flow_graph, FlowField};
use super::image::ImageGrid;
use crate::error::{Error, Result};
use crate::motion::KeypointSet;
use crate::numcore::{CustomOp, Graph, Tensor, Var};

/// Bilinear sample position for one output pixel.
#[derive(Clone, Copy)]
struct Sample {
    r0: usize,
    c0: usize,
    ty: f64,
    tx: f64,
    clamped_y: bool,
    clamped_x: bool,
}

/// Where pixel `(r, c)` reads from under `flow = (fx, fy)`. Positions outside
/// the grid clamp to the border.
fn sample_at(r: usize, c: usize, fx: f64, fy: f64, h: usize, w: usize) -> Sample {
    let col = c as f64 + fx * (w - 1) as f64 / 2.0;
    let row = r as f64 - fy * (h - 1) as f64 / 2.0;
    let (col, clamped_x) = clamp_axis(col, w);
    let (row, clamped_y) = clamp_axis(row, h);
    let c0 = (col.floor() as usize).min(w - 2);
    let r0 = (row.floor() as usize).min(h - 2);
    Sample {
        r0,
        c0,
        ty: row - r0 as f64,
        tx: col - c0 as f64,
        clamped_y,
        clamped_x,
    }
}

fn clamp_axis(v: f64, n: usize) -> (f64, bool) {
    let hi = (n - 1) as f64;
    if v < 0.0 {
        (0.0, true)
    } else if v > hi {
        (hi, true)
    } else {
        (v, false)
    }
}

fn warp_data(img: &[f64], flow: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * ch];
    let at = |r: usize, c: usize, k: usize| img[(r * w + c) * ch + k];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let s = sample_at(r, c, flow[2 * p], flow[2 * p + 1], h, w);
            for k in 0..ch {
                let top = (1.0 - s.tx) * at(s.r0, s.c0, k) + s.tx * at(s.r0, s.c0 + 1, k);
                let bottom =
                    (1.0 - s.tx) * at(s.r0 + 1, s.c0, k) + s.tx * at(s.r0 + 1, s.c0 + 1, k);
                out[p * ch + k] = (1.0 - s.ty) * top + s.ty * bottom;
            }
        }
    }
    out
}

/// Backward warping: `out(p) = img(p + flow(p))`, bilinear, clamp-to-edge.
pub fn bilinear_warp(img: &ImageGrid, flow: &FlowField) -> Result<ImageGrid> {
    if img.height() != flow.height() || img.width() != flow.width() {
        return Err(Error::shape(format!(
            "image {}x{} vs flow {}x{}",
            img.height(),
            img.width(),
            flow.height(),
            flow.width()
        )));
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    ImageGrid::new(h, w, ch, warp_data(img.data(), flow.data(), h, w, ch))
}

/// The prediction image: `img` warped by the flow from `source` to `driving`.
pub fn render(
    img: &ImageGrid,
    source: &KeypointSet,
    driving: &KeypointSet,
    sigma: f64,
) -> Result<ImageGrid> {
    let flow = keypoint_flow(source, driving, img.height(), img.width(), sigma)?;
    bilinear_warp(img, &flow)
}

struct WarpRule;

impl CustomOp for WarpRule {
    fn name(&self) -> &'static str {
        "bilinear_warp"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (img, flow) = (inputs[0], inputs[1]);
        let [h, w, ch] = *img.shape() else {
            unreachable!("checked when recorded")
        };
        let (src, fl, go) = (img.data(), flow.data(), grad_output.data());
        let at = |r: usize, c: usize, k: usize| src[(r * w + c) * ch + k];
        let mut g_img = needs_grad[0].then(|| Tensor::zeros(img.shape()));
        let mut g_flow = needs_grad[1].then(|| Tensor::zeros(flow.shape()));
        let sx = (w - 1) as f64 / 2.0;
        let sy = -((h - 1) as f64) / 2.0;
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                let s = sample_at(r, c, fl[2 * p], fl[2 * p + 1], h, w);
                let (mut d_col, mut d_row) = (0.0, 0.0);
                for k in 0..ch {
                    let g = go[p * ch + k];
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(gi) = g_img.as_mut() {
                        let d = gi.data_mut();
                        d[(s.r0 * w + s.c0) * ch + k] += g * (1.0 - s.ty) * (1.0 - s.tx);
                        d[(s.r0 * w + s.c0 + 1) * ch + k] += g * (1.0 - s.ty) * s.tx;
                        d[((s.r0 + 1) * w + s.c0) * ch + k] += g * s.ty * (1.0 - s.tx);
                        d[((s.r0 + 1) * w + s.c0 + 1) * ch + k] += g * s.ty * s.tx;
                    }
                    let (i00, i01) = (at(s.r0, s.c0, k), at(s.r0, s.c0 + 1, k));
                    let (i10, i11) = (at(s.r0 + 1, s.c0, k), at(s.r0 + 1, s.c0 + 1, k));
                    d_col += g * ((1.0 - s.ty) * (i01 - i00) + s.ty * (i11 - i10));
                    d_row += g * ((1.0 - s.tx) * (i10 - i00) + s.tx * (i11 - i01));
                }
                if let Some(gf) = g_flow.as_mut() {
                    let d = gf.data_mut();
                    if !s.clamped_x {
                        d[2 * p] = d_col * sx;
                    }
                    if !s.clamped_y {
                        d[2 * p + 1] = d_row * sy;
                    }
                }
            }
        }
        vec![g_img, g_flow]
    }
}

/// Differentiable [`bilinear_warp`] of `img [H, W, C]` by `flow [H, W, 2]`.
pub fn bilinear_warp_graph(g: &mut Graph, img: Var, flow: Var) -> Result<Var> {
    let (it, ft) = (g.value(img), g.value(flow));
    let [h, w, ch] = *it.shape() else {
        return Err(Error::shape(format!("image tensor {:?}", it.shape())));
    };
    if ft.shape() != [h, w, 2] {
        return Err(Error::shape(format!(
            "flow {:?} does not match image {:?}",
            ft.shape(),
            it.shape()
        )));
    }
    if h < 2 || w < 2 {
        return Err(Error::shape("images must be at least 2x2"));
    }
    let out = Tensor::new(vec![h, w, ch], warp_data(it.data(), ft.data(), h, w, ch))?;
    Ok(g.custom(&[img, flow], out, Box::new(WarpRule)))
}

/// Differentiable [`render`].
pub fn render_graph(g: &mut Graph, img: Var, source: Var, driving: Var, sigma: f64) -> Result<Var> {
    let [h, w, _] = *g.value(img).shape() else {
        return Err(Error::shape("image tensor must be [H, W, C]"));
    };
    let flow = keypoint_flow_graph(g, source, driving, h, w, sigma)?;
    bilinear_warp_graph(g, img, flow)
}
