//! Browser bindings for three poseforge operations: augmentation preview,
//! DSNT keypoint extraction and synthetic scene projection. Each binding is a
//! thin wrapper over a plain function that is also tested natively.

use poseforge::augment::{apply_policy, histogram_equalize, rand_policy_apply, AugConfig, AugPolicy, GrayImage};
use poseforge::heatmap::{dsnt, normalize_heatmap, render_gaussian_heatmap, CoordinateGrid};
use poseforge::scenegen::{generate_record, SceneConfig};
use poseforge::{rng, Result};
use wasm_bindgen::prelude::*;

/// Augments an 8-bit grayscale image. `policy` is a policy name, or `random`
/// for a seeded triple. Returns the new pixels and the applied policy names.
pub fn augment(width: usize, height: usize, pixels: &[u8], seed: u64, policy: &str, equalize: bool) -> Result<(Vec<u8>, Vec<String>)> {
    let mut img = GrayImage::from_bytes(width, height, pixels)?;
    if equalize {
        img = histogram_equalize(&img);
    }
    let cfg = AugConfig { seed, ..AugConfig::default() };
    let mut r = rng::child(seed, 0);
    let (out, names) = if policy == "random" {
        let (o, t) = rand_policy_apply(&img, &cfg, &mut r);
        (o, t.iter().map(|p| p.name().to_owned()).collect())
    } else {
        let p: AugPolicy = policy.parse()?;
        (apply_policy(&img, p, &cfg, &mut r), vec![p.name().to_owned()])
    };
    Ok((out.to_bytes(), names))
}

/// Renders a Gaussian heatmap peaked at normalized `(x, y)` and reads the
/// keypoint back with DSNT. Returns `[x̂, ŷ, cell_0, cell_1, …]` with the
/// cells normalized to sum to one.
pub fn heatmap_roundtrip(rows: usize, cols: usize, x: f64, y: f64, sigma: f64) -> Result<Vec<f64>> {
    let grid = CoordinateGrid::new(rows, cols);
    let hm = render_gaussian_heatmap(&[[x, y]], sigma, &grid)?;
    let h = normalize_heatmap(&hm.maps[0]);
    let k = dsnt(&h, &grid);
    let mut out = vec![k[0], k[1]];
    out.extend(h);
    Ok(out)
}

/// Draws synthetic scene `id` and returns, flattened:
/// `[W, H, t_x, t_y, t_z, q_w, q_x, q_y, q_z, x0, y0, w, h, u_0, v_0, …, u_10, v_10]`.
pub fn scene(seed: u64, id: u64) -> Result<Vec<f64>> {
    let cfg = SceneConfig::default();
    let r = generate_record(id, &cfg, seed)?;
    let mut out = vec![cfg.camera.width as f64, cfg.camera.height as f64];
    out.extend(r.pose.t.iter());
    out.extend(r.pose.q.to_array());
    out.extend(r.bbox.to_array());
    out.extend(r.keypoints.iter().flatten());
    Ok(out)
}

fn js(e: poseforge::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = augmentImage)]
pub fn augment_image(width: usize, height: usize, pixels: &[u8], seed: u32, policy: &str, equalize: bool) -> Result<Vec<u8>, JsError> {
    augment(width, height, pixels, seed.into(), policy, equalize).map(|(p, _)| p).map_err(js)
}

/// Comma-separated names of the policies [`augment_image`] applies for the
/// same arguments.
#[wasm_bindgen(js_name = augmentPolicies)]
pub fn augment_policies(width: usize, height: usize, pixels: &[u8], seed: u32, policy: &str, equalize: bool) -> Result<String, JsError> {
    augment(width, height, pixels, seed.into(), policy, equalize).map(|(_, n)| n.join(",")).map_err(js)
}

#[wasm_bindgen(js_name = heatmapRoundtrip)]
pub fn heatmap_roundtrip_js(rows: usize, cols: usize, x: f64, y: f64, sigma: f64) -> Result<Vec<f64>, JsError> {
    heatmap_roundtrip(rows, cols, x, y, sigma).map_err(js)
}

#[wasm_bindgen(js_name = syntheticScene)]
pub fn scene_js(seed: u32, id: u32) -> Result<Vec<f64>, JsError> {
    scene(seed.into(), id.into()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Vec<u8> {
        (0..w * h).map(|i| ((i * 7) % 256) as u8).collect()
    }

    #[test]
    fn augment_is_seeded() {
        let px = ramp(32, 24);
        let (a, na) = augment(32, 24, &px, 5, "random", false).unwrap();
        let (b, nb) = augment(32, 24, &px, 5, "random", false).unwrap();
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert_eq!(na.len(), 3);
        assert_eq!(a.len(), px.len());
    }

    #[test]
    fn none_policy_keeps_pixels() {
        let px = ramp(16, 16);
        let (a, names) = augment(16, 16, &px, 1, "none", false).unwrap();
        assert_eq!(a, px);
        assert_eq!(names, ["none"]);
        assert!(augment(16, 16, &px, 1, "sharpen", false).is_err());
        assert!(augment(16, 15, &px, 1, "none", false).is_err());
    }

    #[test]
    fn heatmap_peak_is_recovered() {
        let out = heatmap_roundtrip(64, 64, 0.3, 0.7, 1.5).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-3 && (out[1] - 0.7).abs() < 1e-3);
        assert_eq!(out.len(), 2 + 64 * 64);
        assert!((out[2..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_keypoints_lie_in_image() {
        let s = scene(0, 3).unwrap();
        assert_eq!(s.len(), 2 + 3 + 4 + 4 + 22);
        let (w, h) = (s[0], s[1]);
        for p in s[13..].chunks(2) {
            assert!(p[0] >= 0.0 && p[0] < w && p[1] >= 0.0 && p[1] < h);
        }
    }
}
