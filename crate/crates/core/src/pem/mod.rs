//! Attention-based pose regressor from 2D keypoints to a 6D pose, with an
//! analytic backward pass, Adam training and binary checkpoints.

mod checkpoint;
mod linalg;
mod loss;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{load_weights, read_weights, save_weights, sidecar_path, write_weights, CheckpointMeta, FORMAT_VERSION, MAGIC};
pub use linalg::{gemm, layer_norm, LN_EPS};
pub use loss::pem_loss;
pub use model::{attention_forward, backward as pem_backward_raw, encoder_layer, forward_batch, EncoderLayer, ForwardCache};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use params::{Arch, Layout, PemConfig, PemWeights, RotationHead, TensorKind, TensorSpec};
pub use train::{
    evaluate, finite_difference_check, predict_batch, train_pem, EpochLog, GradCheck, TrainConfig, TrainLog,
};

use crate::error::{Error, Result};
use crate::geometry::{matrix_to_quat, sixd_to_matrix, CameraIntrinsics, Pose, Quaternion, RotationSixD};
use crate::heatmap::BoundingBox;
use nalgebra::Vector3;

/// Box-relative coordinates: `((x − x0)/w, (y − y0)/h)`, unclamped.
pub fn normalize_keypoints(ks: &[[f64; 2]], bbox: &BoundingBox) -> Result<Vec<[f64; 2]>> {
    bbox.validate()?;
    Ok(ks.iter().map(|p| [(p[0] - bbox.x0) / bbox.w, (p[1] - bbox.y0) / bbox.h]).collect())
}

/// The whole image as a box. Model inputs are normalized against this frame
/// so that the keypoint scale still carries the target distance.
pub fn image_frame(cam: &CameraIntrinsics) -> BoundingBox {
    BoundingBox { x0: 0.0, y0: 0.0, w: cam.width as f64, h: cam.height as f64 }
}

/// Raw model outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PemOutput {
    /// Translation divided by the distance normalizer.
    pub t_norm: [f64; 3],
    /// Six numbers for the 6D head, four (unnormalized) for the quaternion head.
    pub rotation: Vec<f64>,
}

impl PemOutput {
    fn from_slice(out: &[f64]) -> Self {
        PemOutput { t_norm: [out[0], out[1], out[2]], rotation: out[3..].to_vec() }
    }

    pub fn sixd(&self) -> Option<RotationSixD> {
        <[f64; 6]>::try_from(self.rotation.as_slice()).ok().map(RotationSixD)
    }
}

fn flatten(ks_norm: &[[f64; 2]], k: usize) -> Result<Vec<f64>> {
    if ks_norm.len() != k {
        return Err(Error::Shape { expected: k, actual: ks_norm.len() });
    }
    Ok(ks_norm.iter().flatten().copied().collect())
}

/// Forward pass on one set of normalized keypoints.
pub fn pem_forward(w: &PemWeights, ks_norm: &[[f64; 2]]) -> Result<(PemOutput, ForwardCache)> {
    let x = flatten(ks_norm, w.config.num_keypoints)?;
    let (out, cache) = forward_batch(w, &x, 1)?;
    Ok((PemOutput::from_slice(&out), cache))
}

/// Gradients of every weight given `∂L/∂outputs` for the cached forward pass.
pub fn pem_backward(w: &PemWeights, cache: &ForwardCache, upstream: &PemOutput) -> Result<Vec<f64>> {
    let mut d: Vec<f64> = upstream.t_norm.to_vec();
    d.extend_from_slice(&upstream.rotation);
    model::backward(w, cache, &d)
}

/// Converts raw outputs into a metric pose with a unit quaternion.
pub fn decode_pose(cfg: &PemConfig, out: &PemOutput) -> Result<Pose> {
    let t = Vector3::from(out.t_norm) * cfg.d_max;
    let q = match cfg.rotation {
        RotationHead::SixD => {
            let r6 = out.sixd().ok_or(Error::Shape { expected: 6, actual: out.rotation.len() })?;
            matrix_to_quat(&sixd_to_matrix(&r6)?)?
        }
        RotationHead::Quaternion => {
            let r = &out.rotation;
            Quaternion::new(r[0], r[1], r[2], r[3]).map_err(|_| Error::DegenerateRotation("zero quaternion output"))?
        }
    };
    Ok(Pose { t, q })
}

/// Pose from full-image keypoints, normalized against `bbox`.
pub fn predict_pose(w: &PemWeights, ks: &[[f64; 2]], bbox: &BoundingBox) -> Result<Pose> {
    let (out, _) = pem_forward(w, &normalize_keypoints(ks, bbox)?)?;
    decode_pose(&w.config, &out)
}
