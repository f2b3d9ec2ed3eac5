//! Wing loss, the landmark-guided loss, and the stitching / retargeting
//! objectives. Each objective has a plain form and a graph form with the same
//! value.
//!
//! Pixel consistency terms are summed absolute differences over the region
//! selected by `1 - mask`.

use serde::{Deserialize, Serialize};

use crate::conditions::GuideLandmarks;
use crate::error::{Error, Result};
use crate::face::GUIDE_INDICES;
use crate::motion::{KeypointSet, NUM_KEYPOINTS};
use crate::numcore::{CustomOp, Graph, Tensor, Var};
use crate::render::{ImageGrid, RegionMask};

/// Wing loss shape. Residuals are multiplied by `scale` before the loss is
/// applied, so the defaults act on hundredths of a normalized unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WingParams {
    pub w: f64,
    pub epsilon: f64,
    pub scale: f64,
}

impl Default for WingParams {
    fn default() -> Self {
        WingParams {
            w: 10.0,
            epsilon: 2.0,
            scale: 100.0,
        }
    }
}

impl WingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.epsilon > 0.0 && self.scale > 0.0) {
            return Err(Error::domain(format!("invalid wing parameters {self:?}")));
        }
        Ok(())
    }

    /// Offset joining the two branches at `|d| = w`.
    pub fn c(&self) -> f64 {
        self.w - self.w * (1.0 + self.w / self.epsilon).ln()
    }
}

/// `w ln(1 + |d| / eps)` for `|d| < w`, else `|d| - C`.
pub fn wing(d: f64, p: &WingParams) -> f64 {
    let a = d.abs();
    if a < p.w {
        p.w * (1.0 + a / p.epsilon).ln()
    } else {
        a - p.c()
    }
}

fn wing_grad(d: f64, p: &WingParams) -> f64 {
    let a = d.abs();
    let slope = if a < p.w { p.w / (p.epsilon + a) } else { 1.0 };
    if d > 0.0 {
        slope
    } else if d < 0.0 {
        -slope
    } else {
        0.0
    }
}

struct WingRule(WingParams);

impl CustomOp for WingRule {
    fn name(&self) -> &'static str {
        "wing"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        _needs_grad: &[bool],
    ) -> Vec<Option<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad_output.data())
            .map(|(&d, &g)| g * wing_grad(d, &self.0))
            .collect();
        vec![Some(
            Tensor::new(inputs[0].shape().to_vec(), data).expect("same shape"),
        )]
    }
}

/// Elementwise [`wing`] on a graph node.
pub fn wing_graph(g: &mut Graph, d: Var, p: &WingParams) -> Var {
    let out = g.value(d).map(|v| wing(v, p));
    g.custom(&[d], out, Box::new(WingRule(*p)))
}

fn check_guide(landmarks: &[[f64; 2]], indices: &[usize]) -> Result<()> {
    if landmarks.len() != indices.len() || indices.is_empty() {
        return Err(Error::config(format!(
            "{} landmarks for {} guided keypoints",
            landmarks.len(),
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= NUM_KEYPOINTS) {
        return Err(Error::config(format!("guided keypoint index {bad} out of range")));
    }
    Ok(())
}

/// Landmark-guided loss over arbitrary guided keypoints:
/// `(1 / 2N) sum_i [wing(l_i - x_s,i) + wing(l_i - x_d,i)]`, with wing
/// applied to each of the two coordinates and summed.
pub fn guide_loss_indexed(
    landmarks: &[[f64; 2]],
    indices: &[usize],
    x_s: &KeypointSet,
    x_d: &KeypointSet,
    p: &WingParams,
) -> Result<f64> {
    check_guide(landmarks, indices)?;
    let mut total = 0.0;
    for (l, &k) in landmarks.iter().zip(indices) {
        for c in 0..2 {
            total += wing(p.scale * (l[c] - x_s[k][c]), p);
            total += wing(p.scale * (l[c] - x_d[k][c]), p);
        }
    }
    Ok(total / (2.0 * indices.len() as f64))
}

/// [`guide_loss_indexed`] on the ten eye and lip guide keypoints.
pub fn guide_loss(
    landmarks: &GuideLandmarks,
    x_s: &KeypointSet,
    x_d: &KeypointSet,
    p: &WingParams,
) -> Result<f64> {
    guide_loss_indexed(&landmarks.0, &GUIDE_INDICES, x_s, x_d, p)
}

/// Graph form of [`guide_loss`]; `x_s` and `x_d` hold 63 values each.
pub fn guide_loss_graph(
    g: &mut Graph,
    landmarks: &GuideLandmarks,
    x_s: Var,
    x_d: Var,
    p: &WingParams,
) -> Result<Var> {
    let idx: Vec<usize> = GUIDE_INDICES.iter().flat_map(|&k| [3 * k, 3 * k + 1]).collect();
    let target = g.constant(Tensor::vector(landmarks.0.iter().flatten().copied().collect()));
    let mut terms = Vec::with_capacity(2);
    for x in [x_s, x_d] {
        let picked = g.gather(x, &idx)?;
        let r = g.sub(target, picked)?;
        let r = g.scale(r, p.scale);
        let w = wing_graph(g, r, p);
        terms.push(g.sum(w));
    }
    let s = g.add(terms[0], terms[1])?;
    Ok(g.scale(s, 1.0 / (2.0 * GUIDE_INDICES.len() as f64)))
}

/// Regularizer and condition weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub reg_st: f64,
    pub cond_eyes: f64,
    pub reg_eyes: f64,
    pub cond_lip: f64,
    pub reg_lip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reg_st: 1.0,
            cond_eyes: 10.0,
            reg_eyes: 1.0,
            cond_lip: 10.0,
            reg_lip: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.reg_st, self.cond_eyes, self.reg_eyes, self.cond_lip, self.reg_lip];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Individual terms of an objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub consistency: f64,
    pub condition: f64,
    pub regularization: f64,
    pub total: f64,
}

impl LossTerms {
    fn new(consistency: f64, condition: f64, regularization: f64) -> Self {
        LossTerms {
            consistency,
            condition,
            regularization,
            total: consistency + condition + regularization,
        }
    }
}

/// `sum |(a - b) (1 - mask)|`.
pub fn masked_l1(a: &ImageGrid, b: &ImageGrid, mask: &RegionMask) -> Result<f64> {
    check_masked(a, b, mask)?;
    let ch = a.channels();
    Ok(a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (x, y))| (x - y).abs() * (1.0 - mask.data()[i / ch]))
        .sum())
}

fn check_masked(a: &ImageGrid, b: &ImageGrid, mask: &RegionMask) -> Result<()> {
    if !a.same_shape(b) || a.height() != mask.height() || a.width() != mask.width() {
        return Err(Error::shape(format!(
            "images {}x{}x{} / {}x{}x{} vs mask {}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Shoulder consistency plus `reg_st ||delta||_1` over the full 65-wide output.
pub fn stitching_loss(
    i_st: &ImageGrid,
    i_recon: &ImageGrid,
    non_shoulder: &RegionMask,
    delta: &[f64],
    w: &LossWeights,
) -> Result<LossTerms> {
    if delta.len() != NUM_KEYPOINTS * 3 + 2 {
        return Err(Error::shape(format!("stitching offset has {} entries, expected 65", delta.len())));
    }
    let cons = masked_l1(i_st, i_recon, non_shoulder)?;
    Ok(LossTerms::new(cons, 0.0, w.reg_st * l1(delta)))
}

/// Consistency outside the eyes, `cond_eyes * mean_j |c_p,j - c_d|`, and
/// `reg_eyes ||delta||_1`.
pub fn eyes_loss(
    i_eyes: &ImageGrid,
    i_recon: &ImageGrid,
    eyes: &RegionMask,
    c_p: [f64; 2],
    c_d: f64,
    delta: &KeypointSet,
    w: &LossWeights,
) -> Result<LossTerms> {
    let cons = masked_l1(i_eyes, i_recon, eyes)?;
    let cond = 0.5 * ((c_p[0] - c_d).abs() + (c_p[1] - c_d).abs());
    Ok(LossTerms::new(cons, w.cond_eyes * cond, w.reg_eyes * delta.l1()))
}

/// Lip counterpart of [`eyes_loss`].
pub fn lip_loss(
    i_lip: &ImageGrid,
    i_recon: &ImageGrid,
    lip: &RegionMask,
    c_p: f64,
    c_d: f64,
    delta: &KeypointSet,
    w: &LossWeights,
) -> Result<LossTerms> {
    let cons = masked_l1(i_lip, i_recon, lip)?;
    Ok(LossTerms::new(cons, w.cond_lip * (c_p - c_d).abs(), w.reg_lip * delta.l1()))
}

/// Graph nodes of an objective's terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub consistency: Var,
    pub condition: Option<Var>,
    pub regularization: Var,
    pub total: Var,
}

impl LossVars {
    pub fn terms(&self, g: &Graph) -> LossTerms {
        let v = |x: Var| g.value(x).data()[0];
        LossTerms {
            consistency: v(self.consistency),
            condition: self.condition.map_or(0.0, v),
            regularization: v(self.regularization),
            total: v(self.total),
        }
    }
}

/// `sum |(a - b) (1 - mask)|` on `[H, W, C]` nodes.
pub fn masked_l1_graph(g: &mut Graph, a: Var, b: Var, mask: &RegionMask) -> Result<Var> {
    let shape = g.value(a).shape().to_vec();
    let [h, w, ch] = shape[..] else {
        return Err(Error::shape(format!("image node must be [H, W, C], got {shape:?}")));
    };
    if h != mask.height() || w != mask.width() {
        return Err(Error::shape(format!("{h}x{w} image vs {}x{} mask", mask.height(), mask.width())));
    }
    let keep = g.constant(mask.complement_tensor(ch));
    let d = g.sub(a, b)?;
    let d = g.mul(d, keep)?;
    let d = g.abs(d);
    Ok(g.sum(d))
}

fn l1_graph(g: &mut Graph, x: Var, weight: f64) -> Var {
    let a = g.abs(x);
    let s = g.sum(a);
    g.scale(s, weight)
}

fn combine(g: &mut Graph, cons: Var, cond: Option<Var>, reg: Var) -> Result<LossVars> {
    let mut total = g.add(cons, reg)?;
    if let Some(c) = cond {
        total = g.add(total, c)?;
    }
    Ok(LossVars {
        consistency: cons,
        condition: cond,
        regularization: reg,
        total,
    })
}

pub fn stitching_loss_graph(
    g: &mut Graph,
    i_st: Var,
    i_recon: Var,
    non_shoulder: &RegionMask,
    delta: Var,
    w: &LossWeights,
) -> Result<LossVars> {
    let cons = masked_l1_graph(g, i_st, i_recon, non_shoulder)?;
    let reg = l1_graph(g, delta, w.reg_st);
    combine(g, cons, None, reg)
}

/// `c_p` is a 2-entry node (left, right).
#[allow(clippy::too_many_arguments)]
pub fn eyes_loss_graph(
    g: &mut Graph,
    i_eyes: Var,
    i_recon: Var,
    eyes: &RegionMask,
    c_p: Var,
    c_d: f64,
    delta: Var,
    w: &LossWeights,
) -> Result<LossVars> {
    let cons = masked_l1_graph(g, i_eyes, i_recon, eyes)?;
    let diff = g.add_scalar(c_p, -c_d);
    let n = g.value(diff).len() as f64;
    let cond = l1_graph(g, diff, w.cond_eyes / n);
    let reg = l1_graph(g, delta, w.reg_eyes);
    combine(g, cons, Some(cond), reg)
}

/// `c_p` is a 1-entry node.
#[allow(clippy::too_many_arguments)]
pub fn lip_loss_graph(
    g: &mut Graph,
    i_lip: Var,
    i_recon: Var,
    lip: &RegionMask,
    c_p: Var,
    c_d: f64,
    delta: Var,
    w: &LossWeights,
) -> Result<LossVars> {
    let cons = masked_l1_graph(g, i_lip, i_recon, lip)?;
    let diff = g.add_scalar(c_p, -c_d);
    let cond = l1_graph(g, diff, w.cond_lip);
    let reg = l1_graph(g, delta, w.reg_lip);
    combine(g, cons, Some(cond), reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wing_values() {
        let p = WingParams::default();
        assert_eq!(wing(0.0, &p), 0.0);
        assert!((wing(1.0, &p) - 10.0 * 1.5f64.ln()).abs() < 1e-12);
        assert_eq!(wing(-3.0, &p), wing(3.0, &p));
        let inner = p.w * (1.0 + p.w / p.epsilon).ln();
        let outer = p.w - p.c();
        assert!((inner - outer).abs() < 1e-12);
        assert!((inner - 10.0 * 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wing_graph_gradient() {
        let p = WingParams::default();
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-14.0, -3.0, 0.5, 7.0, 12.0]));
        let y = wing_graph(&mut g, x, &p);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        let expected = [-1.0, -2.0, 10.0 / 2.5, 10.0 / 9.0, 1.0];
        for (a, b) in grads.wrt(x).unwrap().data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn guide_index_errors() {
        let x = KeypointSet::zeros();
        let p = WingParams::default();
        assert!(matches!(
            guide_loss_indexed(&[[0.0, 0.0]], &[21], &x, &x, &p),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            guide_loss_indexed(&[[0.0, 0.0]], &[0, 1], &x, &x, &p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weights_reject_negative() {
        let w = LossWeights {
            reg_st: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
