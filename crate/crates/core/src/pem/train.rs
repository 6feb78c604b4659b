use rand::seq::SliceRandom;

use super::loss::loss_and_grad;
use super::model::{backward, forward_batch};
use super::optim::{adam_step, cosine_lr, AdamConfig, AdamState};
use super::params::{PemConfig, PemWeights, RotationHead};
use super::{decode_pose, image_frame, normalize_keypoints, PemOutput};
use crate::config::{parse_value, Configurable};
use crate::error::{Error, Result};
use crate::geometry::{matrix_to_sixd, quat_to_matrix, CameraIntrinsics, Pose};
use crate::heatmap::BoundingBox;
use crate::metrics::{aggregate, pose_errors, PoseErrors, ScoreReport};
use crate::rng;
use crate::scenegen::{corrupt_keypoints, CorruptionSpec, SceneRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Initial learning rate, annealed to zero by the last step.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fresh keypoint corruption drawn for every sample in every epoch.
    pub corruption: Option<CorruptionSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { adam: AdamConfig::default(), lr: 1e-3, batch_size: 64, epochs: 50, seed: 0, corruption: None }
    }
}

impl Configurable for TrainConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse_value(key, v)?,
            "beta1" => self.adam.beta1 = parse_value(key, v)?,
            "beta2" => self.adam.beta2 = parse_value(key, v)?,
            "eps" => self.adam.eps = parse_value(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "sigma_px" => self.corruption.get_or_insert(CorruptionSpec::CLEAN).sigma_px = parse_value(key, v)?,
            "p_outlier" => self.corruption.get_or_insert(CorruptionSpec::CLEAN).p_outlier = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown train key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(self.lr > 0.0 && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and eps must be positive, weight decay non-negative".into()));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if let Some(c) = &self.corruption {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val: Option<ScoreReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_E_R_deg,val_E_T_m,val_S_P_star\n");
        for e in &self.epochs {
            let (er, et, sp) = match &e.val {
                Some(r) => (r.e_r_deg().to_string(), r.e_t_mean.to_string(), r.s_p_star.to_string()),
                None => Default::default(),
            };
            s.push_str(&format!("{},{},{},{er},{et},{sp}\n", e.epoch, e.lr, e.train_loss));
        }
        s
    }
}

struct Target {
    t: [f64; 3],
    rot: Vec<f64>,
}

fn target(cfg: &PemConfig, pose: &Pose) -> Result<Target> {
    let t = (pose.t / cfg.d_max).into();
    let rot = match cfg.rotation {
        RotationHead::SixD => matrix_to_sixd(&quat_to_matrix(pose.q)?).0.to_vec(),
        RotationHead::Quaternion => {
            let q = if pose.q.w < 0.0 { pose.q.neg() } else { pose.q };
            q.to_array().to_vec()
        }
    };
    Ok(Target { t, rot })
}

/// Mean loss over a batch and its gradient with respect to the raw outputs.
fn batch_loss(cfg: &PemConfig, out: &[f64], targets: &[&Target]) -> Result<(f64, Vec<f64>)> {
    let dim = cfg.output_dim();
    let scale = 1.0 / targets.len() as f64;
    let mut d_out = vec![0.0; out.len()];
    let mut total = 0.0;
    for ((o, g), tg) in out.chunks_exact(dim).zip(d_out.chunks_exact_mut(dim)).zip(targets) {
        let (gt, gr) = g.split_at_mut(3);
        total += loss_and_grad(&o[..3], &o[3..], &tg.t, &tg.rot, gt, gr)?;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, d_out))
}

fn push_normalized(buf: &mut Vec<f64>, ks: &[[f64; 2]], frame: &BoundingBox) -> Result<()> {
    buf.extend(normalize_keypoints(ks, frame)?.iter().flatten());
    Ok(())
}

/// Mini-batch training on `records`; `val`, when given, is scored after
/// every epoch. Deterministic for a given seed.
pub fn train_pem(
    records: &[SceneRecord],
    val: Option<&[SceneRecord]>,
    cam: &CameraIntrinsics,
    cfg: &TrainConfig,
    pem_cfg: PemConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(PemWeights, TrainLog)> {
    if records.is_empty() {
        return Err(Error::EmptySet("training set is empty"));
    }
    cfg.validate()?;
    let mut w = PemWeights::init(pem_cfg, &mut rng::child(cfg.seed, 0))?;
    let frame = image_frame(cam);
    let k = pem_cfg.num_keypoints;
    let targets = records.iter().map(|r| target(&pem_cfg, &r.pose)).collect::<Result<Vec<_>>>()?;
    let mut clean = Vec::with_capacity(records.len() * k * 2);
    for r in records {
        if r.keypoints.len() != k {
            return Err(Error::Shape { expected: k, actual: r.keypoints.len() });
        }
        push_normalized(&mut clean, &r.keypoints, &frame)?;
    }
    let mut shuffle_rng = rng::child(cfg.seed, 1);
    let mut corrupt_rng = rng::child(cfg.seed, 2);
    let mut state = AdamState::new(w.num_params());
    let mut order: Vec<usize> = (0..records.len()).collect();
    let steps_per_epoch = records.len().div_ceil(cfg.batch_size);
    let mut log = TrainLog::default();
    let mut inputs = Vec::with_capacity(cfg.batch_size * k * 2);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            inputs.clear();
            for &i in chunk {
                match &cfg.corruption {
                    Some(spec) => {
                        let r = &records[i];
                        let noisy = corrupt_keypoints(&r.keypoints, spec, &r.bbox, &mut corrupt_rng);
                        push_normalized(&mut inputs, &noisy, &frame)?;
                    }
                    None => inputs.extend_from_slice(&clean[i * k * 2..(i + 1) * k * 2]),
                }
            }
            let batch_targets: Vec<&Target> = chunk.iter().map(|&i| &targets[i]).collect();
            let (out, cache) = forward_batch(&w, &inputs, chunk.len())?;
            let (loss, d_out) = batch_loss(&pem_cfg, &out, &batch_targets)?;
            loss_sum += loss * chunk.len() as f64;
            let grads = backward(&w, &cache, &d_out)?;
            let progress = (epoch * steps_per_epoch + b) as f64 / steps_per_epoch as f64;
            adam_step(&mut w, &grads, &mut state, cosine_lr(progress, cfg.epochs as f64, cfg.lr), &cfg.adam);
        }
        let val_report = match val {
            Some(v) => Some(evaluate(&w, v, cam)?.1),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            lr: cosine_lr(epoch as f64, cfg.epochs as f64, cfg.lr),
            train_loss: loss_sum / records.len() as f64,
            val: val_report,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok((w, log))
}

const EVAL_BATCH: usize = 256;

/// Poses for many keypoint sets, each normalized against `bbox`.
pub fn predict_batch(w: &PemWeights, keypoints: &[&[[f64; 2]]], bbox: &BoundingBox) -> Result<Vec<Pose>> {
    let dim = w.config.output_dim();
    let mut poses = Vec::with_capacity(keypoints.len());
    let mut inputs = Vec::new();
    for chunk in keypoints.chunks(EVAL_BATCH) {
        inputs.clear();
        for ks in chunk {
            if ks.len() != w.config.num_keypoints {
                return Err(Error::Shape { expected: w.config.num_keypoints, actual: ks.len() });
            }
            push_normalized(&mut inputs, ks, bbox)?;
        }
        let (out, _) = forward_batch(w, &inputs, chunk.len())?;
        for o in out.chunks_exact(dim) {
            poses.push(decode_pose(&w.config, &PemOutput::from_slice(o))?);
        }
    }
    Ok(poses)
}

/// Per-record errors and their aggregate on clean keypoints.
pub fn evaluate(w: &PemWeights, records: &[SceneRecord], cam: &CameraIntrinsics) -> Result<(Vec<PoseErrors>, ScoreReport)> {
    let ks: Vec<&[[f64; 2]]> = records.iter().map(|r| r.keypoints.as_slice()).collect();
    let preds = predict_batch(w, &ks, &image_frame(cam))?;
    let errors = preds.iter().zip(records).map(|(p, r)| pose_errors(p, &r.pose)).collect::<Result<Vec<_>>>()?;
    let report = aggregate(&errors)?;
    Ok((errors, report))
}

const GRAD_FLOOR: f64 = 1e-6;

/// Finite-difference agreement for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub tensor: String,
    pub len: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)`. The floor
    /// covers tensors whose true gradient is zero, such as the key bias under
    /// a shift-invariant softmax.
    pub rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err < tol
    }
}

/// Signs at every non-differentiable point of the loss: rectifier inputs
/// and L1 residuals.
fn kink_pattern(cfg: &PemConfig, out: &[f64], cache: &super::model::ForwardCache, targets: &[Target]) -> Vec<bool> {
    let mut p = cache.relu_pattern();
    for (o, tg) in out.chunks_exact(cfg.output_dim()).zip(targets) {
        let rot = &o[3..];
        let norm = match cfg.rotation {
            RotationHead::SixD => 1.0,
            RotationHead::Quaternion => rot.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        p.extend(rot.iter().zip(&tg.rot).map(|(a, b)| a / norm > *b));
    }
    p
}

const PROBE_ATTEMPTS: u64 = 32;

/// Compares the analytic gradient of the mean training loss on a small random
/// batch against central differences with the given step, per tensor.
///
/// A probe batch where some `±step` perturbation flips a rectifier or an L1
/// residual sign has no derivative to compare against; such batches are
/// redrawn from the next stream.
pub fn finite_difference_check(pem_cfg: PemConfig, seed: u64, step: f64) -> Result<Vec<GradCheck>> {
    for attempt in 0..PROBE_ATTEMPTS {
        if let Some(checks) = check_probe(pem_cfg, rng::child(seed, attempt), step)? {
            return Ok(checks);
        }
    }
    Err(Error::Infeasible(format!("no kink-free probe batch in {PROBE_ATTEMPTS} attempts")))
}

fn check_probe(pem_cfg: PemConfig, mut r: rng::Rng, step: f64) -> Result<Option<Vec<GradCheck>>> {
    use rand::Rng;
    let mut w = PemWeights::init(pem_cfg, &mut r)?;
    // non-trivial norm and embedding parameters so their gradients are generic
    for t in &w.layout.tensors {
        if t.kind != super::params::TensorKind::Weight {
            for v in &mut w.data[t.range()] {
                *v += r.gen_range(-0.3..0.3);
            }
        }
    }
    w.touch();
    let batch = 3;
    let inputs: Vec<f64> = (0..batch * pem_cfg.num_keypoints * 2).map(|_| r.gen_range(-0.2..1.2)).collect();
    let targets: Vec<Target> = (0..batch)
        .map(|_| Target {
            t: [r.gen_range(-0.2..0.2), r.gen_range(-0.2..0.2), r.gen_range(0.3..1.0)],
            rot: (0..pem_cfg.rotation.dim()).map(|_| r.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let refs: Vec<&Target> = targets.iter().collect();
    let (out, cache) = forward_batch(&w, &inputs, batch)?;
    let pattern = kink_pattern(&pem_cfg, &out, &cache, &targets);
    let (_, d_out) = batch_loss(&pem_cfg, &out, &refs)?;
    let analytic = backward(&w, &cache, &d_out)?;
    let loss_at = |w: &PemWeights| -> Result<Option<f64>> {
        let (out, cache) = forward_batch(w, &inputs, batch)?;
        if kink_pattern(&pem_cfg, &out, &cache, &targets) != pattern {
            return Ok(None);
        }
        Ok(Some(batch_loss(&pem_cfg, &out, &refs)?.0))
    };
    let mut probe = w.clone();
    let mut checks = Vec::new();
    for t in &w.layout.tensors {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for i in t.range() {
            let orig = probe.data[i];
            probe.data[i] = orig + step;
            let plus = loss_at(&probe)?;
            probe.data[i] = orig - step;
            let minus = loss_at(&probe)?;
            probe.data[i] = orig;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                return Ok(None);
            };
            let numeric = (plus - minus) / (2.0 * step);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let rel_err = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(GRAD_FLOOR);
        checks.push(GradCheck { tensor: t.name.clone(), len: t.len(), rel_err });
    }
    Ok(Some(checks))
}
