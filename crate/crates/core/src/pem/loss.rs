use crate::error::{Error, Result};

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `‖t − t̂‖ / ‖t̂‖ + ‖r − r̂‖₁` with `t̂`, `r̂` the ground truth.
pub fn pem_loss(t_norm: &[f64; 3], r6: &[f64; 6], gt_t_norm: &[f64; 3], gt_r6: &[f64; 6]) -> Result<f64> {
    let mut dt = [0.0; 3];
    let mut dr = [0.0; 6];
    loss_and_grad(t_norm, r6, gt_t_norm, gt_r6, &mut dt, &mut dr)
}

/// Loss of one sample plus its gradient with respect to the raw outputs.
/// `rot` and `gt_rot` share a length: 6 for the 6D head, 4 for the
/// quaternion head, where the prediction is normalized before the L1 term.
pub(crate) fn loss_and_grad(
    t: &[f64],
    rot: &[f64],
    gt_t: &[f64],
    gt_rot: &[f64],
    d_t: &mut [f64],
    d_rot: &mut [f64],
) -> Result<f64> {
    let gt_norm = gt_t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(gt_norm > 0.0) {
        return Err(Error::InvalidGroundTruth("ground-truth translation has zero norm"));
    }
    let diff: Vec<f64> = t.iter().zip(gt_t).map(|(a, b)| a - b).collect();
    let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (g, d) in d_t.iter_mut().zip(&diff) {
        *g = if dist > 0.0 { d / (dist * gt_norm) } else { 0.0 };
    }
    let mut loss = dist / gt_norm;
    if rot.len() == 4 {
        let norm = rot.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateRotation("quaternion output has zero norm"));
        }
        let q: Vec<f64> = rot.iter().map(|v| v / norm).collect();
        let s: Vec<f64> = q.iter().zip(gt_rot).map(|(a, b)| sign(a - b)).collect();
        loss += q.iter().zip(gt_rot).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let qs: f64 = q.iter().zip(&s).map(|(a, b)| a * b).sum();
        for ((g, si), qi) in d_rot.iter_mut().zip(&s).zip(&q) {
            *g = (si - qi * qs) / norm;
        }
    } else {
        for ((g, a), b) in d_rot.iter_mut().zip(rot).zip(gt_rot) {
            loss += (a - b).abs();
            *g = sign(a - b);
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let r = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(pem_loss(&[0.1, 0.2, 0.5], &r, &[0.1, 0.2, 0.5], &r).unwrap(), 0.0);
        let l = pem_loss(&[0.0, 0.0, 0.6], &r, &[0.0, 0.0, 0.5], &r).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
        let off = r.map(|v| v + 0.1);
        let l = pem_loss(&[0.0, 0.0, 0.5], &off, &[0.0, 0.0, 0.5], &r).unwrap();
        assert!((l - 0.6).abs() < 1e-12);
        assert!(matches!(pem_loss(&[0.0; 3], &r, &[0.0; 3], &r), Err(Error::InvalidGroundTruth(_))));
    }

    #[test]
    fn quaternion_gradient_matches_finite_differences() {
        let raw = [0.7, -0.2, 0.4, 0.3];
        let gt = [0.8, 0.1, 0.5, 0.3];
        let t = [0.1, 0.0, 0.5];
        let f = |r: &[f64]| {
            let (mut a, mut b) = ([0.0; 3], [0.0; 4]);
            loss_and_grad(&t, r, &t, &gt, &mut a, &mut b).unwrap()
        };
        let (mut dt, mut dr) = ([0.0; 3], [0.0; 4]);
        loss_and_grad(&t, &raw, &t, &gt, &mut dt, &mut dr).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let (mut p, mut m) = (raw, raw);
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - dr[i]).abs() < 1e-7, "{i}: {fd} vs {}", dr[i]);
        }
    }
}
