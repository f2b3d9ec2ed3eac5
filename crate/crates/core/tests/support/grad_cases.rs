//! Gradient comparisons shared by the gradient tests and the acceptance
//! run. Analytic gradients are compared with central differences of the
//! plain (non-graph) implementations. Test points keep every absolute-value
//! residual above `1e-3` and every bilinear sample position clear of the
//! pixel grid lines, where sampling has kinks.
#![allow(dead_code)]

use lpkm_core::conditions::{aperture_ratio_graph, eyes_open_condition, GuideLandmarks};
use lpkm_core::face::{ExpressionParams, FaceTemplate, LEFT_EYE, RIGHT_EYE};
use lpkm_core::losses::{
    eyes_loss, eyes_loss_graph, guide_loss, guide_loss_graph, lip_loss, lip_loss_graph,
    stitching_loss, stitching_loss_graph, LossWeights, WingParams,
};
use lpkm_core::motion::{KeypointSet, KEYPOINT_DIM};
use lpkm_core::numcore::{finite_diff_check, sample_coords, GradCheck, Graph, Mlp, Tensor};
use lpkm_core::render::{
    keypoint_flow, region_mask, render, render_graph, ImageGrid, Region, RegionMask,
};
use lpkm_core::retarget::{
    apply_stitch, eyes_offset, stitch_input, stitch_offset, stitch_projection, EyesRetargetWeights,
    StitchingWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SIZE: usize = 24;
pub const SIGMA: f64 = 0.15;

/// One finite-difference comparison.
#[derive(Debug)]
pub struct Case {
    pub name: &'static str,
    pub coords: usize,
    pub result: GradCheck,
}

fn check(name: &'static str, value: impl FnMut(&[f64]) -> f64, point: &[f64], grad: &[f64], coords: &[usize]) -> Case {
    let result = finite_diff_check(value, point, grad, coords, H);
    Case { name, coords: coords.len(), result }
}

/// Smooth texture, so rendered residuals stay small.
pub fn texture() -> ImageGrid {
    ImageGrid::from_fn(SIZE, SIZE, 1, |r, c, _| {
        0.5 + 0.2 * (0.4 * c as f64 + 0.3 * r as f64).sin() + 0.1 * (0.7 * r as f64).cos()
    })
    .unwrap()
}

pub fn shifted(img: &ImageGrid, by: f64) -> ImageGrid {
    ImageGrid::new(img.height(), img.width(), 1, img.data().iter().map(|v| v + by).collect()).unwrap()
}

pub fn image_from(flat: &[f64]) -> ImageGrid {
    ImageGrid::new(SIZE, SIZE, 1, flat.to_vec()).unwrap()
}

pub fn mask(region: Region) -> RegionMask {
    let t = FaceTemplate::default();
    region_mask(&t, region, &t.canonical, SIZE, SIZE).unwrap()
}

/// Smallest unmasked `|a - b|`.
pub fn min_residual(a: &ImageGrid, b: &ImageGrid, m: &RegionMask) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .zip(m.data())
        .filter(|(_, &m)| m == 0.0)
        .map(|((x, y), _)| (x - y).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Smallest distance, in pixels, from any bilinear sample position to a grid
/// line.
pub fn grid_margin(x_s: &KeypointSet, x_d: &KeypointSet) -> f64 {
    let flow = keypoint_flow(x_s, x_d, SIZE, SIZE, SIGMA).unwrap();
    let half = (SIZE - 1) as f64 / 2.0;
    let mut m = f64::INFINITY;
    for r in 0..SIZE {
        for c in 0..SIZE {
            let f = flow.at(r, c);
            for v in [c as f64 + f[0] * half, r as f64 - f[1] * half] {
                m = m.min((v - v.round()).abs());
            }
        }
    }
    m
}

/// Normalized offset moving samples 0.4 pixels off the grid.
pub const OFF_GRID: f64 = 0.4 * 2.0 / (SIZE - 1) as f64;

/// Entries in `[0.01, 0.1]` with random signs.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(0.01..0.1);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect()
}

pub fn image_and_delta_point(rng: &mut ChaCha8Rng, n_delta: usize) -> Vec<f64> {
    let mut p: Vec<f64> = texture().data().to_vec();
    p.extend(away_from_zero(rng, n_delta));
    p
}

/// Glorot network whose last layer is damped and whose outputs sit near
/// `bias`.
pub fn damped(sizes: &[usize], rng: &mut ChaCha8Rng, bias: &[f64]) -> Mlp {
    let mut net = Mlp::glorot(sizes, rng);
    let mut params = net.params_mut();
    let n = params.len();
    params[n - 2].data_mut().iter_mut().for_each(|v| *v *= 1e-2);
    params[n - 1].data_mut().copy_from_slice(bias);
    net
}

/// `n` values of magnitude 0.004 with random signs.
pub fn small_signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(0.5) { 0.004 } else { -0.004 }).collect()
}

pub fn flat_params(net: &Mlp) -> Vec<f64> {
    net.params().iter().flat_map(|t| t.data().to_vec()).collect()
}

pub fn with_params(net: &Mlp, flat: &[f64]) -> Mlp {
    let mut out = net.clone();
    let mut at = 0;
    for t in out.params_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    out
}

pub fn mlp_grad(net: &Mlp, g: &Graph, vars: &lpkm_core::numcore::MlpVars, loss: lpkm_core::numcore::Var) -> Vec<f64> {
    let grads = g.backward(loss).unwrap();
    vars.flat()
        .iter()
        .zip(net.params())
        .flat_map(|(&v, p)| grads.wrt_or_zeros(v, p).into_data())
        .collect()
}

/// Driving keypoints shifted off the grid, with a little per-keypoint jitter.
pub fn posed_pair(rng: &mut ChaCha8Rng) -> (KeypointSet, KeypointSet) {
    let x_s = FaceTemplate::default().canonical;
    let mut x_d = x_s;
    for k in 0..21 {
        x_d[k][0] += OFF_GRID + rng.random_range(-0.002..0.002);
        x_d[k][1] += OFF_GRID + rng.random_range(-0.002..0.002);
    }
    (x_s, x_d)
}

pub fn guide() -> Case {
    let p = WingParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let base = FaceTemplate::default().canonical;
    let lm = GuideLandmarks::from_keypoints(&base);
    // Residuals of 0.005..0.2 normalized units straddle both wing branches.
    let mut point = Vec::with_capacity(2 * KEYPOINT_DIM);
    for _ in 0..2 {
        for k in 0..21 {
            for c in 0..3 {
                let mut r = rng.random_range(0.005..0.2);
                while (r * p.scale - p.w).abs() < 1e-3 {
                    r = rng.random_range(0.005..0.2);
                }
                point.push(base[k][c] + if rng.random_bool(0.5) { r } else { -r });
            }
        }
    }
    let split = |x: &[f64]| {
        (
            KeypointSet::from_flat(&x[..KEYPOINT_DIM]).unwrap(),
            KeypointSet::from_flat(&x[KEYPOINT_DIM..]).unwrap(),
        )
    };
    let mut g = Graph::new();
    let xs = g.param(Tensor::vector(point[..KEYPOINT_DIM].to_vec()));
    let xd = g.param(Tensor::vector(point[KEYPOINT_DIM..].to_vec()));
    let loss = guide_loss_graph(&mut g, &lm, xs, xd, &p).unwrap();
    let (a, b) = split(&point);
    assert!((g.value(loss).item().unwrap() - guide_loss(&lm, &a, &b, &p).unwrap()).abs() < 1e-12);
    let grads = g.backward(loss).unwrap();
    let mut grad = grads.wrt(xs).unwrap().data().to_vec();
    grad.extend(grads.wrt(xd).unwrap().data());
    // Only the twenty guided coordinates of each set carry gradient; check
    // every coordinate so unguided ones must come out exactly zero.
    let coords: Vec<usize> = (0..point.len()).collect();
    check(
        "guide",
        |x| {
            let (a, b) = split(x);
            guide_loss(&lm, &a, &b, &p).unwrap()
        },
        &point,
        &grad,
        &coords,
    )
}

pub fn stitching() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = mask(Region::NonShoulder);
    let recon = shifted(&texture(), -0.05);
    let w = LossWeights::default();
    let point = image_and_delta_point(&mut rng, 65);
    let n = SIZE * SIZE;
    assert!(min_residual(&image_from(&point[..n]), &recon, &m) > 1e-3);

    let mut g = Graph::new();
    let img = g.param(Tensor::new(vec![SIZE, SIZE, 1], point[..n].to_vec()).unwrap());
    let rec = g.constant(recon.to_tensor());
    let delta = g.param(Tensor::vector(point[n..].to_vec()));
    let loss = stitching_loss_graph(&mut g, img, rec, &m, delta, &w).unwrap();
    let grads = g.backward(loss.total).unwrap();
    let mut grad = grads.wrt(img).unwrap().data().to_vec();
    grad.extend(grads.wrt(delta).unwrap().data());
    let coords = sample_coords(&mut rng, point.len(), 150);
    check(
        "stitching",
        |x| stitching_loss(&image_from(&x[..n]), &recon, &m, &x[n..], &w).unwrap().total,
        &point,
        &grad,
        &coords,
    )
}

pub fn eyes() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = mask(Region::Eyes);
    let recon = shifted(&texture(), 0.04);
    let w = LossWeights::default();
    let c_d = 0.45;
    let mut point = image_and_delta_point(&mut rng, KEYPOINT_DIM);
    point.extend([0.2, 0.7]);
    let n = SIZE * SIZE;
    assert!(min_residual(&image_from(&point[..n]), &recon, &m) > 1e-3);

    let mut g = Graph::new();
    let img = g.param(Tensor::new(vec![SIZE, SIZE, 1], point[..n].to_vec()).unwrap());
    let rec = g.constant(recon.to_tensor());
    let delta = g.param(Tensor::vector(point[n..n + KEYPOINT_DIM].to_vec()));
    let c_p = g.param(Tensor::vector(point[n + KEYPOINT_DIM..].to_vec()));
    let loss = eyes_loss_graph(&mut g, img, rec, &m, c_p, c_d, delta, &w).unwrap();
    let grads = g.backward(loss.total).unwrap();
    let mut grad = grads.wrt(img).unwrap().data().to_vec();
    grad.extend(grads.wrt(delta).unwrap().data());
    grad.extend(grads.wrt(c_p).unwrap().data());
    let mut coords = sample_coords(&mut rng, n + KEYPOINT_DIM, 150);
    coords.extend([n + KEYPOINT_DIM, n + KEYPOINT_DIM + 1]);
    check(
        "eyes",
        |x| {
            let d = KeypointSet::from_flat(&x[n..n + KEYPOINT_DIM]).unwrap();
            let c = [x[n + KEYPOINT_DIM], x[n + KEYPOINT_DIM + 1]];
            eyes_loss(&image_from(&x[..n]), &recon, &m, c, c_d, &d, &w).unwrap().total
        },
        &point,
        &grad,
        &coords,
    )
}

pub fn lip() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = mask(Region::Lip);
    let recon = shifted(&texture(), -0.04);
    let w = LossWeights::default();
    let c_d = 0.1;
    let mut point = image_and_delta_point(&mut rng, KEYPOINT_DIM);
    point.push(0.35);
    let n = SIZE * SIZE;
    assert!(min_residual(&image_from(&point[..n]), &recon, &m) > 1e-3);

    let mut g = Graph::new();
    let img = g.param(Tensor::new(vec![SIZE, SIZE, 1], point[..n].to_vec()).unwrap());
    let rec = g.constant(recon.to_tensor());
    let delta = g.param(Tensor::vector(point[n..n + KEYPOINT_DIM].to_vec()));
    let c_p = g.param(Tensor::vector(vec![point[n + KEYPOINT_DIM]]));
    let loss = lip_loss_graph(&mut g, img, rec, &m, c_p, c_d, delta, &w).unwrap();
    let grads = g.backward(loss.total).unwrap();
    let mut grad = grads.wrt(img).unwrap().data().to_vec();
    grad.extend(grads.wrt(delta).unwrap().data());
    grad.extend(grads.wrt(c_p).unwrap().data());
    let mut coords = sample_coords(&mut rng, n + KEYPOINT_DIM, 150);
    coords.push(n + KEYPOINT_DIM);
    check(
        "lip",
        |x| {
            let d = KeypointSet::from_flat(&x[n..n + KEYPOINT_DIM]).unwrap();
            lip_loss(&image_from(&x[..n]), &recon, &m, x[n + KEYPOINT_DIM], c_d, &d, &w).unwrap().total
        },
        &point,
        &grad,
        &coords,
    )
}

pub fn stitching_pipeline() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let bias = small_signs(&mut rng, 65);
    let net = damped(StitchingWeights::SIZES, &mut rng, &bias);
    let (x_s, x_d) = posed_pair(&mut rng);
    let img = texture();
    let recon = shifted(&img, -0.2);
    let m = mask(Region::NonShoulder);
    let w = LossWeights::default();

    let value = |net: &Mlp| {
        let sw = StitchingWeights::from_mlp(net.clone()).unwrap();
        let (d, shift) = stitch_offset(&sw, &x_s, &x_d).unwrap();
        let pred = render(&img, &x_s, &apply_stitch(&x_d, &d, shift), SIGMA).unwrap();
        let out = net.forward(&stitch_input(&x_s, &x_d)).unwrap();
        (stitching_loss(&pred, &recon, &m, &out, &w).unwrap().total, pred, out)
    };
    let (v0, pred, out) = value(&net);
    let sw = StitchingWeights::from_mlp(net.clone()).unwrap();
    let (d, shift) = stitch_offset(&sw, &x_s, &x_d).unwrap();
    assert!(grid_margin(&x_s, &apply_stitch(&x_d, &d, shift)) > 0.1);
    assert!(min_residual(&pred, &recon, &m) > 1e-3);
    assert!(out.iter().all(|v| v.abs() > 1e-3));

    let mut g = Graph::new();
    let vars = net.bind(&mut g);
    let input = g.constant(Tensor::new(vec![1, 126], stitch_input(&x_s, &x_d)).unwrap());
    let out = Mlp::forward_graph(&vars, &mut g, input).unwrap();
    let p = g.constant(stitch_projection());
    let moved = g.matmul(out, p).unwrap();
    let base = g.constant(Tensor::new(vec![1, KEYPOINT_DIM], x_d.flatten().to_vec()).unwrap());
    let driven = g.add(base, moved).unwrap();
    let driven = g.row(driven, 0).unwrap();
    let im = g.constant(img.to_tensor());
    let xs = g.constant(Tensor::vector(x_s.flatten().to_vec()));
    let pred = render_graph(&mut g, im, xs, driven, SIGMA).unwrap();
    let rec = g.constant(recon.to_tensor());
    let delta = g.row(out, 0).unwrap();
    let loss = stitching_loss_graph(&mut g, pred, rec, &m, delta, &w).unwrap();
    assert!((g.value(loss.total).item().unwrap() - v0).abs() < 1e-10);
    let grad = mlp_grad(&net, &g, &vars, loss.total);

    let point = flat_params(&net);
    let coords = sample_coords(&mut rng, point.len(), 120);
    check("stitching pipeline", |x| value(&with_params(&net, x)).0, &point, &grad, &coords)
}

pub fn eyes_pipeline() -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    // Offsets of about OFF_GRID in x and y keep the render off the grid.
    let jitter = small_signs(&mut rng, KEYPOINT_DIM);
    let bias: Vec<f64> = (0..KEYPOINT_DIM)
        .map(|i| if i % 3 == 2 { jitter[i] } else { OFF_GRID + 0.5 * jitter[i] })
        .collect();
    let net = damped(EyesRetargetWeights::SIZES, &mut rng, &bias);
    let t = FaceTemplate::default();
    let open = ExpressionParams { eyes_open: 0.3, lip_open: 0.2, brow: 0.0 };
    let x_s = t.canonical + t.expression_offsets(&t.canonical, open);
    let c_s = eyes_open_condition(&x_s).unwrap();
    let c_d = 0.7;
    let img = texture();
    let recon = shifted(&img, 0.2);
    let m = mask(Region::Eyes);
    let w = LossWeights::default();

    let value = |net: &Mlp| {
        let ew = EyesRetargetWeights::from_mlp(net.clone()).unwrap();
        let d = eyes_offset(&ew, &x_s, c_s, c_d).unwrap();
        let x = x_s + d;
        let c = eyes_open_condition(&x).unwrap();
        let pred = render(&img, &x_s, &x, SIGMA).unwrap();
        let total = eyes_loss(&pred, &recon, &m, [c.left, c.right], c_d, &d, &w).unwrap().total;
        (total, pred, d, c)
    };
    let (v0, pred, d, c) = value(&net);
    assert!(grid_margin(&x_s, &(x_s + d)) > 0.1);
    assert!(min_residual(&pred, &recon, &m) > 1e-3);
    assert!(d.flatten().iter().all(|v| v.abs() > 1e-3));
    assert!(c.left > 1e-3 && c.right > 1e-3);
    assert!((c.left - c_d).abs() > 1e-3 && (c.right - c_d).abs() > 1e-3);

    let mut g = Graph::new();
    let vars = net.bind(&mut g);
    let input = g.constant(Tensor::new(vec![1, 66], lpkm_core::retarget::eyes_input(&x_s, c_s, c_d)).unwrap());
    let delta = Mlp::forward_graph(&vars, &mut g, input).unwrap();
    let base = g.constant(Tensor::new(vec![1, KEYPOINT_DIM], x_s.flatten().to_vec()).unwrap());
    let driven = g.add(base, delta).unwrap();
    let left = aperture_ratio_graph(&mut g, driven, LEFT_EYE).unwrap();
    let right = aperture_ratio_graph(&mut g, driven, RIGHT_EYE).unwrap();
    let c_p = g.concat(&[left, right]);
    let xd = g.row(driven, 0).unwrap();
    let im = g.constant(img.to_tensor());
    let xs = g.constant(Tensor::vector(x_s.flatten().to_vec()));
    let pred = render_graph(&mut g, im, xs, xd, SIGMA).unwrap();
    let rec = g.constant(recon.to_tensor());
    let d_row = g.row(delta, 0).unwrap();
    let loss = eyes_loss_graph(&mut g, pred, rec, &m, c_p, c_d, d_row, &w).unwrap();
    assert!((g.value(loss.total).item().unwrap() - v0).abs() < 1e-10);
    let grad = mlp_grad(&net, &g, &vars, loss.total);

    let point = flat_params(&net);
    let coords = sample_coords(&mut rng, point.len(), 120);
    check("eyes pipeline", |x| value(&with_params(&net, x)).0, &point, &grad, &coords)
}

pub fn all() -> Vec<Case> {
    vec![guide(), stitching(), eyes(), lip(), stitching_pipeline(), eyes_pipeline()]
}
