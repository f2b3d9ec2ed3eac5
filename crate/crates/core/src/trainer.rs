//! Synthetic data and the training loops for the stitching and retargeting
//! networks. The renderer and the motion model are fixed; only the network
//! being trained changes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{
    aperture_ratio_graph, eyes_open_condition, lip_open_condition, EyesOpenTuple, LipOpenScalar,
};
use crate::error::{Error, Result};
use crate::face::{ExpressionParams, FaceTemplate, LEFT_EYE, MOUTH, RIGHT_EYE};
use crate::losses::{
    eyes_loss_graph, lip_loss_graph, stitching_loss_graph, LossTerms, LossVars, LossWeights,
};
use crate::motion::{
    euler_to_rotation, transform_scaled, EulerAngles, KeypointSet, MotionParams, KEYPOINT_DIM,
};
use crate::numcore::{AdamConfig, AdamState, Graph, Mlp, MlpVars, Tensor, Var};
use crate::render::{region_mask, render, render_graph, ImageGrid, Region, RegionMask};
use crate::retarget::{
    cross_id_driving, eyes_input, lip_input, stitch_input, stitch_projection, EyesRetargetWeights,
    LipRetargetWeights, StitchingWeights,
};

/// Upper end of the driving scalar range used in training.
pub const MAX_DRIVING_SCALAR: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Flow kernel width in normalized units. Read from the renderer section
    /// of a run configuration, not from the training section.
    #[serde(skip)]
    pub sigma: f64,
    #[serde(skip)]
    pub image_size: usize,
    /// Training identities.
    pub samples: usize,
    /// Evaluation identities, generated after the training ones.
    pub held_out: usize,
    pub checkpoint_every: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 32,
            seed: 0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            sigma: 0.15,
            image_size: 64,
            samples: 256,
            held_out: 32,
            checkpoint_every: 500,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.batch == 0 || self.samples == 0 {
            return Err(Error::config("batch and samples must be at least 1"));
        }
        if self.image_size < 16 {
            return Err(Error::config("image_size must be at least 16"));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One synthetic identity with its own pose and a cross-identity driving
/// pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub canonical: KeypointSet,
    pub source: MotionParams,
    /// Motion of a different identity.
    pub driving: MotionParams,
    pub source_kp: KeypointSet,
    /// Source canonical keypoints under the other identity's motion.
    pub driving_kp: KeypointSet,
    pub image: ImageGrid,
    pub eyes: EyesOpenTuple,
    pub lip: LipOpenScalar,
    pub driving_eyes: f64,
    pub driving_lip: f64,
}

/// Head pose, scale, translation and expression drawn for an identity.
pub fn sample_motion<R: Rng + ?Sized>(
    template: &FaceTemplate,
    canonical: &KeypointSet,
    rng: &mut R,
) -> MotionParams {
    let angles = EulerAngles::new(
        rng.random_range(-12.0..12.0),
        rng.random_range(-15.0..15.0),
        rng.random_range(-8.0..8.0),
    );
    let expr = ExpressionParams {
        eyes_open: rng.random_range(0.1..0.6),
        lip_open: rng.random_range(0.0..0.5),
        brow: rng.random_range(-0.02..0.03),
    };
    MotionParams {
        scale: rng.random_range(0.92..1.08),
        rotation: euler_to_rotation(angles),
        expression: template.expression_offsets(canonical, expr),
        translation: [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ],
    }
}

/// RNG stream for sample `index` of the dataset seeded by `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// RNG for network initialization under `seed`, on a stream no sample uses.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    sample_rng(seed, u64::MAX - 1)
}

/// Sample `index` of the dataset for `seed`; independent of every other index.
pub fn gen_sample(
    template: &FaceTemplate,
    seed: u64,
    index: u64,
    image_size: usize,
) -> Result<SyntheticSample> {
    let mut rng = sample_rng(seed, index);
    let canonical = template.sample_identity(&mut rng);
    let source = sample_motion(template, &canonical, &mut rng);
    let other = template.sample_identity(&mut rng);
    let driving = sample_motion(template, &other, &mut rng);
    let source_kp = transform_scaled(&canonical, &source)?;
    let driving_kp = cross_id_driving(&canonical, &driving)?;
    let image = template.rasterize(&source_kp, image_size, 1)?;
    Ok(SyntheticSample {
        canonical,
        source,
        driving,
        source_kp,
        driving_kp,
        image,
        eyes: eyes_open_condition(&source_kp)?,
        lip: lip_open_condition(&source_kp)?,
        driving_eyes: rng.random_range(0.0..=MAX_DRIVING_SCALAR),
        driving_lip: rng.random_range(0.0..=MAX_DRIVING_SCALAR),
    })
}

/// `n` samples, indices `offset..offset + n`.
pub fn gen_dataset_range(
    template: &FaceTemplate,
    seed: u64,
    offset: usize,
    n: usize,
    image_size: usize,
) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    (offset..offset + n)
        .map(|i| gen_sample(template, seed, i as u64, image_size))
        .collect()
}

/// `n` samples at 64x64.
pub fn gen_dataset(seed: u64, n: usize) -> Result<Vec<SyntheticSample>> {
    gen_dataset_range(&FaceTemplate::default(), seed, 0, n, 64)
}

/// Training and held-out samples for `cfg`.
pub fn gen_split(
    template: &FaceTemplate,
    cfg: &TrainConfig,
) -> Result<(Vec<SyntheticSample>, Vec<SyntheticSample>)> {
    let train = gen_dataset_range(template, cfg.seed, 0, cfg.samples, cfg.image_size)?;
    let held = if cfg.held_out == 0 {
        Vec::new()
    } else {
        gen_dataset_range(template, cfg.seed, cfg.samples, cfg.held_out, cfg.image_size)?
    };
    Ok((train, held))
}

/// Loss terms at one step, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub terms: LossTerms,
}

/// Where the driving scalar for retargeting comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// Uniform in `[0, MAX_DRIVING_SCALAR]`, redrawn every step.
    Random,
    /// The source's own measured condition.
    Source,
}

/// Called at every checkpoint with the step count and the current network.
pub type CheckpointFn<'a> = dyn FnMut(usize, &Mlp) -> Result<()> + 'a;

pub struct TrainRun<W> {
    pub weights: W,
    pub curve: Vec<CurvePoint>,
}

/// Per-sample values that do not change during training.
struct Prepared {
    image: Tensor,
    source: Tensor,
    mask: RegionMask,
}

fn prepare(
    template: &FaceTemplate,
    data: &[SyntheticSample],
    region: Region,
) -> Result<Vec<Prepared>> {
    data.iter()
        .map(|s| {
            Ok(Prepared {
                image: s.image.to_tensor(),
                source: Tensor::vector(s.source_kp.flatten().to_vec()),
                mask: region_mask(template, region, &s.source_kp, s.image.height(), s.image.width())?,
            })
        })
        .collect()
}

/// Generic loop: each step draws a batch, builds the loss graph with
/// `build`, and applies one Adam update.
fn train_loop<B>(
    cfg: &TrainConfig,
    net: &mut Mlp,
    n_data: usize,
    mut build: B,
    checkpoint: &mut CheckpointFn<'_>,
) -> Result<Vec<CurvePoint>>
where
    B: FnMut(&mut Graph, &MlpVars, &[usize], &mut ChaCha8Rng) -> Result<(Var, LossTerms)>,
{
    cfg.validate()?;
    if n_data == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut adam = AdamState::new(cfg.adam(), net.params());
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..n_data)).collect();
        let mut g = Graph::new();
        let vars = net.bind(&mut g);
        // Finite parameters can still overflow in the forward pass.
        let (loss, terms) = match build(&mut g, &vars, &batch, &mut rng) {
            Err(Error::Domain(msg)) => {
                return Err(diverged(step, net, checkpoint, format!("step {step}: {msg}")));
            }
            r => r?,
        };
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .flat()
            .iter()
            .zip(net.params())
            .map(|(&v, p)| grads.wrt_or_zeros(v, p))
            .collect();
        if !terms.total.is_finite() || grads.iter().any(|t| !t.is_finite()) {
            let msg = format!("non-finite loss or gradient at step {step}");
            return Err(diverged(step, net, checkpoint, msg));
        }
        let mut trial = net.clone();
        adam.step(&mut trial.params_mut(), &grads)?;
        if trial.params().iter().any(|t| !t.is_finite()) {
            let msg = format!("non-finite parameters after step {step}");
            return Err(diverged(step, net, checkpoint, msg));
        }
        *net = trial;
        curve.push(CurvePoint { step, terms });
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.steps {
            checkpoint(done, net)?;
        }
    }
    checkpoint(cfg.steps, net)?;
    Ok(curve)
}

/// Checkpoints the last good network and reports the failure. A checkpoint
/// that fails as well is mentioned but does not mask the divergence.
fn diverged(step: usize, net: &Mlp, checkpoint: &mut CheckpointFn<'_>, msg: String) -> Error {
    match checkpoint(step, net) {
        Ok(()) => Error::NumericFailure(msg),
        Err(e) => Error::NumericFailure(format!("{msg}; checkpoint failed: {e}")),
    }
}

fn average(g: &mut Graph, parts: &[LossVars]) -> Result<(Var, LossTerms)> {
    let n = parts.len() as f64;
    let mut sum = LossTerms::default();
    let mut total = parts[0].total;
    for (i, p) in parts.iter().enumerate() {
        let t = p.terms(g);
        sum.consistency += t.consistency / n;
        sum.condition += t.condition / n;
        sum.regularization += t.regularization / n;
        if i > 0 {
            total = g.add(total, p.total)?;
        }
    }
    let loss = g.scale(total, 1.0 / n);
    sum.total = g.value(loss).data()[0];
    Ok((loss, sum))
}

fn batch_tensor(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.flatten().collect();
    Tensor::new(vec![data.len() / width, width], data)
}

/// Trains the stitching network on cross-identity pairs, starting from `init`.
pub fn train_stitching(
    cfg: &TrainConfig,
    template: &FaceTemplate,
    data: &[SyntheticSample],
    init: StitchingWeights,
    checkpoint: &mut CheckpointFn<'_>,
) -> Result<TrainRun<StitchingWeights>> {
    let prepared = prepare(template, data, Region::NonShoulder)?;
    let projection = stitch_projection();
    let mut net = init.into_mlp();
    let curve = train_loop(
        cfg,
        &mut net,
        data.len(),
        |g, vars, batch, _| {
            let input = batch_tensor(
                batch.iter().map(|&i| stitch_input(&data[i].source_kp, &data[i].driving_kp)),
                2 * KEYPOINT_DIM,
            )?;
            let x = g.constant(input);
            let out = Mlp::forward_graph(vars, g, x)?;
            let p = g.constant(projection.clone());
            let moved = g.matmul(out, p)?;
            let base = batch_tensor(
                batch.iter().map(|&i| data[i].driving_kp.flatten().to_vec()),
                KEYPOINT_DIM,
            )?;
            let base = g.constant(base);
            let driven = g.add(base, moved)?;
            let mut parts = Vec::with_capacity(batch.len());
            for (b, &i) in batch.iter().enumerate() {
                let prep = &prepared[i];
                let img = g.constant(prep.image.clone());
                let xs = g.constant(prep.source.clone());
                let xd = g.row(driven, b)?;
                let pred = render_graph(g, img, xs, xd, cfg.sigma)?;
                let delta = g.row(out, b)?;
                parts.push(stitching_loss_graph(g, pred, img, &prep.mask, delta, &cfg.weights)?);
            }
            average(g, &parts)
        },
        checkpoint,
    )?;
    Ok(TrainRun {
        weights: StitchingWeights::from_mlp(net)?,
        curve,
    })
}

fn draw_targets(
    rng: &mut ChaCha8Rng,
    batch: &[usize],
    mode: TargetMode,
    source: impl Fn(usize) -> f64,
) -> Vec<f64> {
    batch
        .iter()
        .map(|&i| match mode {
            TargetMode::Random => rng.random_range(0.0..=MAX_DRIVING_SCALAR),
            TargetMode::Source => source(i),
        })
        .collect()
}

pub fn train_eyes(
    cfg: &TrainConfig,
    template: &FaceTemplate,
    data: &[SyntheticSample],
    init: EyesRetargetWeights,
    mode: TargetMode,
    checkpoint: &mut CheckpointFn<'_>,
) -> Result<TrainRun<EyesRetargetWeights>> {
    let prepared = prepare(template, data, Region::Eyes)?;
    let mut net = init.into_mlp();
    let curve = train_loop(
        cfg,
        &mut net,
        data.len(),
        |g, vars, batch, rng| {
            let targets = draw_targets(rng, batch, mode, |i| data[i].eyes.mean());
            let input = batch_tensor(
                batch
                    .iter()
                    .zip(&targets)
                    .map(|(&i, &c_d)| eyes_input(&data[i].source_kp, data[i].eyes, c_d)),
                KEYPOINT_DIM + 3,
            )?;
            let x = g.constant(input);
            let delta = Mlp::forward_graph(vars, g, x)?;
            retarget_batch(g, cfg, &prepared, batch, delta, |g, driven, b| {
                let left = aperture_ratio_graph(g, driven, LEFT_EYE)?;
                let right = aperture_ratio_graph(g, driven, RIGHT_EYE)?;
                let l = g.gather(left, &[b])?;
                let r = g.gather(right, &[b])?;
                Ok(g.concat(&[l, r]))
            }, |g, pred, img, mask, c_p, b, d| {
                eyes_loss_graph(g, pred, img, mask, c_p, targets[b], d, &cfg.weights)
            })
        },
        checkpoint,
    )?;
    Ok(TrainRun {
        weights: EyesRetargetWeights::from_mlp(net)?,
        curve,
    })
}

pub fn train_lip(
    cfg: &TrainConfig,
    template: &FaceTemplate,
    data: &[SyntheticSample],
    init: LipRetargetWeights,
    mode: TargetMode,
    checkpoint: &mut CheckpointFn<'_>,
) -> Result<TrainRun<LipRetargetWeights>> {
    let prepared = prepare(template, data, Region::Lip)?;
    let mut net = init.into_mlp();
    let curve = train_loop(
        cfg,
        &mut net,
        data.len(),
        |g, vars, batch, rng| {
            let targets = draw_targets(rng, batch, mode, |i| data[i].lip.0);
            let input = batch_tensor(
                batch
                    .iter()
                    .zip(&targets)
                    .map(|(&i, &c_d)| lip_input(&data[i].source_kp, data[i].lip, c_d)),
                KEYPOINT_DIM + 2,
            )?;
            let x = g.constant(input);
            let delta = Mlp::forward_graph(vars, g, x)?;
            retarget_batch(g, cfg, &prepared, batch, delta, |g, driven, b| {
                let ratio = aperture_ratio_graph(g, driven, MOUTH)?;
                g.gather(ratio, &[b])
            }, |g, pred, img, mask, c_p, b, d| {
                lip_loss_graph(g, pred, img, mask, c_p, targets[b], d, &cfg.weights)
            })
        },
        checkpoint,
    )?;
    Ok(TrainRun {
        weights: LipRetargetWeights::from_mlp(net)?,
        curve,
    })
}

/// Shared body of the eyes and lip steps: `x' = x_s + delta`, render, and
/// the per-sample objective.
fn retarget_batch<C, L>(
    g: &mut Graph,
    cfg: &TrainConfig,
    prepared: &[Prepared],
    batch: &[usize],
    delta: Var,
    mut condition: C,
    mut objective: L,
) -> Result<(Var, LossTerms)>
where
    C: FnMut(&mut Graph, Var, usize) -> Result<Var>,
    L: FnMut(&mut Graph, Var, Var, &RegionMask, Var, usize, Var) -> Result<LossVars>,
{
    let base = batch_tensor(
        batch.iter().map(|&i| prepared[i].source.data().to_vec()),
        KEYPOINT_DIM,
    )?;
    let base = g.constant(base);
    let driven = g.add(base, delta)?;
    let mut parts = Vec::with_capacity(batch.len());
    for (b, &i) in batch.iter().enumerate() {
        let prep = &prepared[i];
        let img = g.constant(prep.image.clone());
        let xs = g.constant(prep.source.clone());
        let xd = g.row(driven, b)?;
        let pred = render_graph(g, img, xs, xd, cfg.sigma)?;
        let c_p = condition(g, driven, b)?;
        let d = g.row(delta, b)?;
        parts.push(objective(g, pred, img, &prep.mask, c_p, b, d)?);
    }
    average(g, &parts)
}

/// Shoulder-region consistency of stitched predictions, averaged over `data`.
/// With `weights = None` the raw driving keypoints are rendered.
pub fn shoulder_consistency(
    template: &FaceTemplate,
    data: &[SyntheticSample],
    weights: Option<&StitchingWeights>,
    sigma: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in data {
        let mask = region_mask(
            template,
            Region::NonShoulder,
            &s.source_kp,
            s.image.height(),
            s.image.width(),
        )?;
        let driven = match weights {
            Some(w) => {
                let (d, shift) = crate::retarget::stitch_offset(w, &s.source_kp, &s.driving_kp)?;
                crate::retarget::apply_stitch(&s.driving_kp, &d, shift)
            }
            None => s.driving_kp,
        };
        let pred = render(&s.image, &s.source_kp, &driven, sigma)?;
        total += crate::losses::masked_l1(&pred, &s.image, &mask)?;
    }
    Ok(total / data.len() as f64)
}

/// Mean of each consecutive `window`-step block of total loss.
pub fn block_means(curve: &[CurvePoint], window: usize) -> Vec<f64> {
    curve
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().map(|p| p.terms.total).sum::<f64>() / window as f64)
        .collect()
}
