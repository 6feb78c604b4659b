//! Synthetic labeled scenes: a rigid 11-keypoint spacecraft, pose sampling
//! over the operating distance range, projection to pixel labels and JSONL
//! persistence.

use std::io::{BufRead, Write};
use std::ops::Range;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_value, Configurable};
use crate::error::{Error, Result};
use crate::geometry::{project_points, sample_uniform_rotation, CameraIntrinsics, Pose, Quaternion};
use crate::heatmap::BoundingBox;
use crate::rng;

pub const NUM_KEYPOINTS: usize = 11;

/// Cuboid body plus three antenna tips, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacecraftModel {
    /// Body extent along x, y, z.
    pub dims: [f64; 3],
    pub antenna_tips: [Vector3<f64>; 3],
}

impl SpacecraftModel {
    pub fn with_dims(dims: [f64; 3]) -> Self {
        let [hx, hy, hz] = dims.map(|d| d / 2.0);
        // two antennas near one edge of the +z face and one on the opposite edge
        let antenna_tips = [
            Vector3::new(0.8 * hx, 0.8 * hy, hz + 0.12),
            Vector3::new(-0.8 * hx, 0.8 * hy, hz + 0.12),
            Vector3::new(0.0, -0.8 * hy, hz + 0.2),
        ];
        SpacecraftModel { dims, antenna_tips }
    }

    /// Corners (x-major sign order) followed by the antenna tips.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let [hx, hy, hz] = self.dims.map(|d| d / 2.0);
        let mut pts = Vec::with_capacity(NUM_KEYPOINTS);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    pts.push(Vector3::new(sx * hx, sy * hy, sz * hz));
                }
            }
        }
        pts.extend(self.antenna_tips);
        pts
    }

    pub fn names() -> [&'static str; NUM_KEYPOINTS] {
        [
            "corner_---", "corner_--+", "corner_-+-", "corner_-++", "corner_+--", "corner_+-+", "corner_++-",
            "corner_+++", "antenna_0", "antenna_1", "antenna_2",
        ]
    }
}

pub fn default_model() -> SpacecraftModel {
    SpacecraftModel::with_dims([0.8, 0.75, 0.32])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub camera: CameraIntrinsics,
    pub model: SpacecraftModel,
    /// Target distance range in meters.
    pub distance: (f64, f64),
    /// Fraction of the image kept clear when aiming the target direction.
    pub frustum_margin: f64,
    /// Bounding-box growth per side, as a fraction of the tight box size.
    pub bbox_margin: f64,
    pub max_tries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            camera: CameraIntrinsics::default(),
            model: default_model(),
            distance: (2.2, 10.0),
            frustum_margin: 0.05,
            bbox_margin: 0.1,
            max_tries: 10_000,
        }
    }
}

impl Configurable for SceneConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "fx" => self.camera.fx = parse_value(key, v)?,
            "fy" => self.camera.fy = parse_value(key, v)?,
            "cx" => self.camera.cx = parse_value(key, v)?,
            "cy" => self.camera.cy = parse_value(key, v)?,
            "width" => self.camera.width = parse_value(key, v)?,
            "height" => self.camera.height = parse_value(key, v)?,
            "dim_x" => self.model = SpacecraftModel::with_dims([parse_value(key, v)?, self.model.dims[1], self.model.dims[2]]),
            "dim_y" => self.model = SpacecraftModel::with_dims([self.model.dims[0], parse_value(key, v)?, self.model.dims[2]]),
            "dim_z" => self.model = SpacecraftModel::with_dims([self.model.dims[0], self.model.dims[1], parse_value(key, v)?]),
            "distance_min" => self.distance.0 = parse_value(key, v)?,
            "distance_max" => self.distance.1 = parse_value(key, v)?,
            "frustum_margin" => self.frustum_margin = parse_value(key, v)?,
            "bbox_margin" => self.bbox_margin = parse_value(key, v)?,
            "max_tries" => self.max_tries = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown scene key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let (lo, hi) = self.distance;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("distance range ({lo}, {hi}) must be positive and ordered")));
        }
        if !(0.0..0.5).contains(&self.frustum_margin) || !(0.0..=1.0).contains(&self.bbox_margin) {
            return Err(Error::Config("margins out of range".into()));
        }
        if self.model.dims.iter().any(|d| !(*d > 0.0)) || self.max_tries == 0 {
            return Err(Error::Config("model dimensions and max_tries must be positive".into()));
        }
        Ok(())
    }
}

fn in_image(p: [f64; 2], cam: &CameraIntrinsics) -> bool {
    p[0] >= 0.0 && p[0] < cam.width as f64 && p[1] >= 0.0 && p[1] < cam.height as f64
}

/// Samples a pose whose keypoints all project inside the image. The distance
/// is drawn once; only direction and orientation are resampled on rejection,
/// which keeps the distance uniform on the configured range.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<Pose> {
    let cam = &cfg.camera;
    let points = cfg.model.points();
    let dist = rng.gen_range(cfg.distance.0..=cfg.distance.1);
    let (w, h) = (cam.width as f64, cam.height as f64);
    let m = cfg.frustum_margin;
    for _ in 0..cfg.max_tries {
        let u = rng.gen_range(m * w..=(1.0 - m) * w);
        let v = rng.gen_range(m * h..=(1.0 - m) * h);
        let dir = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0).normalize();
        let q = sample_uniform_rotation(rng);
        let pose = Pose { t: dir * dist, q };
        if let Ok(px) = project_points(&points, &pose, cam) {
            if px.iter().all(|&p| in_image(p, cam)) {
                return Ok(pose);
            }
        }
    }
    Err(Error::Infeasible(format!("no visible pose at distance {dist:.3} m after {} tries", cfg.max_tries)))
}

/// One labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: u64,
    pub pose: Pose,
    pub keypoints: Vec<[f64; 2]>,
    pub bbox: BoundingBox,
    pub camera_id: u32,
}

/// Tight box around the points, grown by `margin` of its size on every side
/// and clamped to the image.
pub fn keypoint_bbox(points: &[[f64; 2]], margin: f64, cam: &CameraIntrinsics) -> Result<BoundingBox> {
    let (mut x_lo, mut y_lo) = (f64::INFINITY, f64::INFINITY);
    let (mut x_hi, mut y_hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x_lo = x_lo.min(p[0]);
        x_hi = x_hi.max(p[0]);
        y_lo = y_lo.min(p[1]);
        y_hi = y_hi.max(p[1]);
    }
    let (dx, dy) = (margin * (x_hi - x_lo), margin * (y_hi - y_lo));
    let x0 = (x_lo - dx).max(0.0);
    let y0 = (y_lo - dy).max(0.0);
    let x1 = (x_hi + dx).min(cam.width as f64);
    let y1 = (y_hi + dy).min(cam.height as f64);
    BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
}

pub fn make_record(
    model: &SpacecraftModel,
    pose: &Pose,
    cam: &CameraIntrinsics,
    id: u64,
    bbox_margin: f64,
) -> Result<SceneRecord> {
    let keypoints = project_points(&model.points(), pose, cam)?;
    let bbox = keypoint_bbox(&keypoints, bbox_margin, cam)?;
    Ok(SceneRecord { id, pose: *pose, keypoints, bbox, camera_id: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    /// Per-axis jitter in pixels.
    pub sigma_px: f64,
    /// Probability that a keypoint is replaced by a uniform draw over the box.
    pub p_outlier: f64,
}

impl CorruptionSpec {
    pub const CLEAN: CorruptionSpec = CorruptionSpec { sigma_px: 0.0, p_outlier: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px >= 0.0) || !(0.0..=1.0).contains(&self.p_outlier) {
            return Err(Error::InvalidInput(format!("invalid corruption spec {self:?}")));
        }
        Ok(())
    }
}

pub fn corrupt_keypoints<R: Rng + ?Sized>(
    ks: &[[f64; 2]],
    spec: &CorruptionSpec,
    bbox: &BoundingBox,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let jitter = Normal::new(0.0, spec.sigma_px).expect("validated sigma");
    ks.iter()
        .map(|p| {
            if rng.gen_bool(spec.p_outlier) {
                [bbox.x0 + rng.gen::<f64>() * bbox.w, bbox.y0 + rng.gen::<f64>() * bbox.h]
            } else {
                [p[0] + jitter.sample(rng), p[1] + jitter.sample(rng)]
            }
        })
        .collect()
}

/// Record `id` drawn from child stream `id` of `seed`.
pub fn generate_record(id: u64, cfg: &SceneConfig, seed: u64) -> Result<SceneRecord> {
    let mut r = rng::child(seed, id);
    let pose = sample_pose(&mut r, cfg)?;
    make_record(&cfg.model, &pose, &cfg.camera, id, cfg.bbox_margin)
}

/// Records for the given id range, in id order.
pub fn generate_records(ids: Range<u64>, cfg: &SceneConfig, seed: u64) -> Result<Vec<SceneRecord>> {
    cfg.validate()?;
    ids.into_par_iter().map(|id| generate_record(id, cfg, seed)).collect()
}

pub fn generate_dataset(n: usize, cfg: &SceneConfig, seed: u64) -> Result<Vec<SceneRecord>> {
    if n == 0 {
        return Err(Error::InvalidInput("dataset size must be at least 1".into()));
    }
    generate_records(0..n as u64, cfg, seed)
}

/// JSONL wire format; unit suffixes are part of the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    t_m: [f64; 3],
    q_wxyz: [f64; 4],
    keypoints_px: Vec<[f64; 2]>,
    bbox_px: [f64; 4],
    #[serde(default, skip_serializing_if = "is_zero")]
    camera_id: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

/// Subset of the record schema carrying only the pose; used for prediction
/// files. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseLine {
    pub id: u64,
    pub t_m: [f64; 3],
    pub q_wxyz: [f64; 4],
}

impl PoseLine {
    pub fn from_pose(id: u64, pose: &Pose) -> Self {
        PoseLine { id, t_m: pose.t.into(), q_wxyz: pose.q.to_array() }
    }

    pub fn pose(&self) -> Result<Pose> {
        Ok(Pose { t: Vector3::from(self.t_m), q: stored_quaternion(self.q_wxyz)? })
    }
}

/// Keeps stored components bit-for-bit when already unit norm.
fn stored_quaternion(a: [f64; 4]) -> Result<Quaternion> {
    let q = Quaternion { w: a[0], x: a[1], y: a[2], z: a[3] };
    if q.to_array().iter().all(|v| v.is_finite()) && (q.norm() - 1.0).abs() <= 1e-9 {
        Ok(q)
    } else {
        Quaternion::from_array(a)
    }
}

impl SceneRecord {
    pub fn to_json_line(&self) -> Result<String> {
        let line = RecordLine {
            id: self.id,
            t_m: self.pose.t.into(),
            q_wxyz: self.pose.q.to_array(),
            keypoints_px: self.keypoints.clone(),
            bbox_px: self.bbox.to_array(),
            camera_id: self.camera_id,
        };
        Ok(serde_json::to_string(&line)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: RecordLine = serde_json::from_str(line)?;
        let [x0, y0, w, h] = r.bbox_px;
        Ok(SceneRecord {
            id: r.id,
            pose: Pose { t: Vector3::from(r.t_m), q: stored_quaternion(r.q_wxyz)? },
            keypoints: r.keypoints_px,
            bbox: BoundingBox::new(x0, y0, w, h)?,
            camera_id: r.camera_id,
        })
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[SceneRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line()?)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SceneRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(SceneRecord::from_json_line(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(records)
}

pub fn read_pose_lines<R: BufRead>(input: R) -> Result<Vec<PoseLine>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn default_model_geometry() {
        let pts = default_model().points();
        assert_eq!(pts.len(), NUM_KEYPOINTS);
        for axis in 0..3 {
            let values: BTreeSet<u64> = pts[..8].iter().map(|p| p[axis].to_bits()).collect();
            assert_eq!(values.len(), 2);
        }
        let centroid: Vector3<f64> = pts[..8].iter().sum::<Vector3<f64>>() / 8.0;
        assert!(centroid.norm() < 1e-15);
    }

    #[test]
    fn sampled_poses_are_in_range_and_visible() {
        let cfg = SceneConfig::default();
        let points = cfg.model.points();
        for id in 0..500 {
            let pose = sample_pose(&mut rng::child(5, id), &cfg).unwrap();
            let d = pose.t.norm();
            assert!((2.2..=10.0).contains(&d));
            let px = project_points(&points, &pose, &cfg.camera).unwrap();
            assert!(px.iter().all(|&p| in_image(p, &cfg.camera)));
        }
        let a = sample_pose(&mut rng::seeded(1), &cfg).unwrap();
        assert_eq!(a, sample_pose(&mut rng::seeded(1), &cfg).unwrap());
    }

    #[test]
    fn infeasible_config_is_reported() {
        let cfg = SceneConfig { distance: (0.3, 0.3), max_tries: 50, ..SceneConfig::default() };
        assert!(matches!(sample_pose(&mut rng::seeded(0), &cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn bbox_contains_keypoints_and_zero_margin_is_tight() {
        let cfg = SceneConfig::default();
        let rec = generate_record(3, &cfg, 7).unwrap();
        assert!(rec.keypoints.iter().all(|&p| rec.bbox.contains(p)));
        let tight = keypoint_bbox(&rec.keypoints, 0.0, &cfg.camera).unwrap();
        let xs = rec.keypoints.iter().map(|p| p[0]);
        let ys = rec.keypoints.iter().map(|p| p[1]);
        assert_eq!(tight.x0, xs.clone().fold(f64::INFINITY, f64::min));
        assert_eq!(tight.y0, ys.clone().fold(f64::INFINITY, f64::min));
        assert_eq!(tight.x0 + tight.w, xs.fold(f64::NEG_INFINITY, f64::max));
        assert_eq!(tight.y0 + tight.h, ys.fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn corruption_edge_cases() {
        let cfg = SceneConfig::default();
        let rec = generate_record(0, &cfg, 1).unwrap();
        let mut r = rng::seeded(2);
        assert_eq!(corrupt_keypoints(&rec.keypoints, &CorruptionSpec::CLEAN, &rec.bbox, &mut r), rec.keypoints);
        let all = CorruptionSpec { sigma_px: 5.0, p_outlier: 1.0 };
        let out = corrupt_keypoints(&rec.keypoints, &all, &rec.bbox, &mut r);
        assert!(out.iter().all(|&p| rec.bbox.contains(p)));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let recs = generate_dataset(5, &SceneConfig::default(), 11).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), recs);
        let poses = read_pose_lines(buf.as_slice()).unwrap();
        assert_eq!(poses[2].pose().unwrap(), recs[2].pose);
        let line = recs[0].to_json_line().unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, BTreeSet::from(["id", "t_m", "q_wxyz", "keypoints_px", "bbox_px"]));
    }

    #[test]
    fn partitioned_generation_matches() {
        let cfg = SceneConfig::default();
        let full = generate_dataset(20, &cfg, 4).unwrap();
        let tail = generate_records(10..20, &cfg, 4).unwrap();
        assert_eq!(&full[10..], tail.as_slice());
    }
}
