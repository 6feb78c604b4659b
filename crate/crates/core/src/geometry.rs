//! Rotation representations, conversions and pinhole projection.
//!
//! Quaternions are scalar-first `(w, x, y, z)` with the Hamilton product. A
//! [`Pose`] holds the rotation taking target-body coordinates into the camera
//! frame together with the target position in that frame, so a body point
//! `p` lands at `R(q) p + t`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-6;
const DEGENERATE_TOL: f64 = 1e-12;

/// Unit quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a unit quaternion, renormalizing the given components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion { w, x, y, z };
        if !q.to_array().iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite quaternion".into()));
        }
        let n = q.norm();
        if n < DEGENERATE_TOL {
            return Err(Error::InvalidInput("zero-norm quaternion".into()));
        }
        Ok(q.scale(1.0 / n))
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }

    fn scale(self, s: f64) -> Quaternion {
        Quaternion { w: self.w * s, x: self.x * s, y: self.y * s, z: self.z * s }
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(self, rhs: Quaternion) -> Quaternion {
        let (a, b) = (self, rhs);
        Quaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }
}

/// Unconstrained 6D rotation encoding: the first two columns `a1`, `a2` of a
/// rotation matrix, stored column-major as `[a1x, a1y, a1z, a2x, a2y, a2z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSixD(pub [f64; 6]);

impl RotationSixD {
    pub fn a1(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn a2(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }
}

/// Proper rotation matrix (`RᵀR = I`, `det R = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and orientation within 1e-6.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite rotation matrix".into()));
        }
        let gram_err = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if gram_err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "not a rotation matrix (|RᵀR - I| = {gram_err:.3e}, det = {det:.6})"
            )));
        }
        Ok(RotationMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn column(&self, j: usize) -> Vector3<f64> {
        self.0.column(j).into_owned()
    }
}

/// Target pose in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Position in meters.
    pub t: Vector3<f64>,
    pub q: Quaternion,
}

impl Pose {
    /// Builds a pose in front of the camera (`t_z > 0`).
    pub fn new(t: Vector3<f64>, q: Quaternion) -> Result<Self> {
        if !t.iter().all(|v| v.is_finite()) || t.z <= 0.0 {
            return Err(Error::InvalidInput(format!("pose position must have t_z > 0, got {t:?}")));
        }
        Ok(Pose { t, q })
    }

    pub fn rotation(&self) -> RotationMatrix {
        quat_to_matrix(self.q).expect("pose quaternion is unit norm")
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = CameraIntrinsics { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")));
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    /// 1920×1200 sensor with a SPEED-like field of view.
    fn default() -> Self {
        CameraIntrinsics { fx: 2988.6, fy: 2988.6, cx: 960.0, cy: 600.0, width: 1920, height: 1200 }
    }
}

pub fn quat_to_matrix(q: Quaternion) -> Result<RotationMatrix> {
    let q = Quaternion::new(q.w, q.x, q.y, q.z)?;
    let Quaternion { w, x, y, z } = q;
    #[rustfmt::skip]
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y),
    );
    Ok(RotationMatrix(m))
}

/// Matrix to quaternion with Shepperd's branch selection: the largest of the
/// trace and the three diagonal entries picks the component recovered by a
/// square root, so the divisor is always at least 1/2.
pub fn matrix_to_quat(r: &RotationMatrix) -> Result<Quaternion> {
    let r = RotationMatrix::from_matrix(r.0)?;
    let m = &r.0;
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let candidates = [trace, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let branch = (0..4)
        .max_by(|&a, &b| candidates[a].total_cmp(&candidates[b]))
        .unwrap_or(0);
    let (w, x, y, z) = match branch {
        0 => {
            let s = 2.0 * (1.0 + trace).sqrt();
            (0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
        }
        1 => {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            ((m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
        }
        2 => {
            let s = 2.0 * (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
            ((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s)
        }
        _ => {
            let s = 2.0 * (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
            ((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s)
        }
    };
    let q = Quaternion::new(w, x, y, z)?;
    Ok(if q.w < 0.0 { q.neg() } else { q })
}

/// Gram-Schmidt decode of the 6D encoding.
pub fn sixd_to_matrix(r: &RotationSixD) -> Result<RotationMatrix> {
    let (a1, a2) = (r.a1(), r.a2());
    if !r.0.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateRotation("non-finite components"));
    }
    let n1 = a1.norm();
    if n1 < DEGENERATE_TOL {
        return Err(Error::DegenerateRotation("first column has zero norm"));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < DEGENERATE_TOL {
        return Err(Error::DegenerateRotation("columns are parallel"));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

pub fn matrix_to_sixd(r: &RotationMatrix) -> RotationSixD {
    let m = &r.0;
    RotationSixD([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

/// Geodesic angle between two orientations, `2 acos |<q, q̂>|`, in `[0, π]`.
///
/// Evaluated as `4 atan2(|q − s q̂|, |q + s q̂|)` with `s` the sign of the dot
/// product, which stays accurate near zero where `acos` does not.
pub fn quat_angular_error(q: Quaternion, q_hat: Quaternion) -> f64 {
    let s = if q.dot(q_hat) < 0.0 { -1.0 } else { 1.0 };
    let (a, b) = (q.to_array(), q_hat.to_array());
    let diff = a.iter().zip(&b).map(|(x, y)| (x - s * y).powi(2)).sum::<f64>().sqrt();
    let sum = a.iter().zip(&b).map(|(x, y)| (x + s * y).powi(2)).sum::<f64>().sqrt();
    4.0 * diff.atan2(sum)
}

/// Projects body-frame points through `pose` onto the image plane.
pub fn project_points(
    points: &[Vector3<f64>],
    pose: &Pose,
    cam: &CameraIntrinsics,
) -> Result<Vec<[f64; 2]>> {
    let r = pose.rotation();
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let pc = r.matrix() * p + pose.t;
            if !(pc.z > 0.0) {
                return Err(Error::BehindCamera { index, depth: pc.z });
            }
            Ok([cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy])
        })
        .collect()
}

/// Uniform rotation on SO(3) (Shoemake's subgroup algorithm).
pub fn sample_uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let (s1, s2) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (a, b) = (2.0 * PI * u2, 2.0 * PI * u3);
    let q = Quaternion { w: s2 * b.cos(), x: s1 * a.sin(), y: s1 * a.cos(), z: s2 * b.sin() };
    // renormalize away rounding in the trigonometric products
    Quaternion::new(q.w, q.x, q.y, q.z).unwrap_or(Quaternion::IDENTITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn rot_about(axis: [f64; 3], angle: f64) -> Quaternion {
        let n = Vector3::from(axis).normalize();
        let s = (angle / 2.0).sin();
        Quaternion::new((angle / 2.0).cos(), n.x * s, n.y * s, n.z * s).unwrap()
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_matrix(Quaternion::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2).unwrap();
        let r = quat_to_matrix(q).unwrap();
        assert!((r.column(0) - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((r.column(1) - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((r.column(2) - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let six = matrix_to_sixd(&r);
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        assert!(six.0.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(Quaternion::new(0.0, 0.0, 0.0, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn half_turn_about_x_recovers_pure_quaternion() {
        let r = RotationMatrix::from_matrix(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        let q = matrix_to_quat(&r).unwrap();
        assert!((q.dot(Quaternion::new(0.0, 1.0, 0.0, 0.0).unwrap()).abs() - 1.0).abs() < 1e-15);
        let q = matrix_to_quat(&RotationMatrix::identity()).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
    }

    #[test]
    fn non_orthonormal_matrix_is_rejected() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.1));
        assert!(RotationMatrix::from_matrix(m).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RotationMatrix::from_matrix(reflection).is_err());
    }

    #[test]
    fn quaternion_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = sample_uniform_rotation(&mut rng);
            let back = matrix_to_quat(&quat_to_matrix(q).unwrap()).unwrap();
            let err = (0..4)
                .map(|i| (back.to_array()[i] - q.to_array()[i]).abs())
                .fold(0.0, f64::max)
                .min((0..4).map(|i| (back.to_array()[i] + q.to_array()[i]).abs()).fold(0.0, f64::max));
            assert!(err < 1e-9, "err {err}");
            let r = quat_to_matrix(q).unwrap();
            let r2 = quat_to_matrix(matrix_to_quat(&r).unwrap()).unwrap();
            assert!((r.matrix() - r2.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn sixd_decode_examples() {
        let r = sixd_to_matrix(&RotationSixD([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
        let r = sixd_to_matrix(&RotationSixD([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
        assert_eq!(matrix_to_sixd(&RotationMatrix::identity()).0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sixd_degenerate_inputs() {
        let zero = RotationSixD([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(sixd_to_matrix(&zero), Err(Error::DegenerateRotation(_))));
        let parallel = RotationSixD([1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(sixd_to_matrix(&parallel), Err(Error::DegenerateRotation(_))));
    }

    #[test]
    fn sixd_decode_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let six = RotationSixD(v);
            let b1 = six.a1().normalize();
            if six.a1().norm() < 0.1 || (six.a2() - b1 * b1.dot(&six.a2())).norm() < 0.1 {
                continue;
            }
            let r = sixd_to_matrix(&six).unwrap();
            let m = r.matrix();
            assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn angular_error_examples() {
        let q = rot_about([0.3, -0.2, 0.9], 1.1);
        assert_eq!(quat_angular_error(q, q), 0.0);
        assert_eq!(quat_angular_error(q, q.neg()), 0.0);
        let z90 = Quaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2).unwrap();
        assert!((quat_angular_error(Quaternion::IDENTITY, z90) - PI / 2.0).abs() < 1e-12);
        let q2 = q.mul(rot_about([1.0, 1.0, 0.0], 0.25));
        assert!((quat_angular_error(q, q2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let cam = CameraIntrinsics::new(1000.0, 1000.0, 960.0, 600.0, 1920, 1200).unwrap();
        let pose = Pose::new(Vector3::new(0.0, 0.0, 5.0), Quaternion::IDENTITY).unwrap();
        let px = project_points(&[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)], &pose, &cam).unwrap();
        assert_eq!(px, vec![[960.0, 600.0], [1160.0, 600.0]]);
        let behind = project_points(&[Vector3::new(0.0, 0.0, -6.0)], &pose, &cam);
        assert!(matches!(behind, Err(Error::BehindCamera { index: 0, .. })));
    }

    #[test]
    fn doubling_focal_length_doubles_offset() {
        let mut cam = CameraIntrinsics::default();
        let pose = Pose::new(Vector3::new(0.3, -0.2, 6.0), rot_about([0.0, 1.0, 0.0], 0.4)).unwrap();
        let pts = [Vector3::new(0.4, 0.1, -0.2)];
        let u1 = project_points(&pts, &pose, &cam).unwrap()[0][0] - cam.cx;
        cam.fx *= 2.0;
        let u2 = project_points(&pts, &pose, &cam).unwrap()[0][0] - cam.cx;
        assert_eq!(u2, 2.0 * u1);
    }

    #[test]
    fn uniform_rotation_is_deterministic_and_unit() {
        let a = sample_uniform_rotation(&mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_uniform_rotation(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10_000 {
            assert!((sample_uniform_rotation(&mut rng).norm() - 1.0).abs() < 1e-9);
        }
    }
}
