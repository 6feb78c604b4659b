//! Photometric and occlusion augmentations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::GrayImage;

const BINS: usize = 256;

fn bin_of(v: f64) -> usize {
    ((v * 255.0).round() as usize).min(BINS - 1)
}

/// 256-bin histogram equalization. Each pixel maps to
/// `(cdf(bin) − cdf_min) / (1 − cdf_min)`, with `cdf_min` taken at the lowest
/// occupied bin. Images occupying a single bin are returned unchanged.
pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let mut counts = [0usize; BINS];
    for &v in img.pixels() {
        counts[bin_of(v)] += 1;
    }
    let total = img.pixels().len() as f64;
    let mut cdf = [0.0; BINS];
    let mut running = 0usize;
    for (b, &c) in counts.iter().enumerate() {
        running += c;
        cdf[b] = running as f64 / total;
    }
    let lowest = counts.iter().position(|&c| c > 0).unwrap_or(0);
    let cdf_min = cdf[lowest];
    if cdf_min >= 1.0 {
        return img.clone();
    }
    let denom = 1.0 - cdf_min;
    GrayImage::from_clamped(img.width(), img.height(), img.pixels().iter().map(|&v| (cdf[bin_of(v)] - cdf_min) / denom))
}

/// Additive i.i.d. Gaussian noise, clamped.
pub fn gaussian_noise<R: Rng + ?Sized>(img: &GrayImage, sigma: f64, rng: &mut R) -> GrayImage {
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    GrayImage::from_clamped(img.width(), img.height(), img.pixels().iter().map(|&v| v + normal.sample(rng)))
}

/// `clamp(α · v + β)`.
pub fn brightness_contrast(img: &GrayImage, alpha: f64, beta: f64) -> GrayImage {
    GrayImage::from_clamped(img.width(), img.height(), img.pixels().iter().map(|&v| alpha * v + beta))
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Draws which cells of a `grid_n × grid_n` partition are hidden, in row-major
/// cell order.
pub fn hidden_cells<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    grid_n: usize,
    p_hide: f64,
    rng: &mut R,
) -> Vec<CellRect> {
    let n = grid_n.max(1);
    let mut cells = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if rng.gen_bool(p_hide.clamp(0.0, 1.0)) {
                cells.push(CellRect {
                    x0: c * width / n,
                    x1: (c + 1) * width / n,
                    y0: r * height / n,
                    y1: (r + 1) * height / n,
                });
            }
        }
    }
    cells
}

/// Hide-and-seek erasing: each grid cell is replaced by `fill` with
/// probability `p_hide`.
pub fn hide_and_seek<R: Rng + ?Sized>(img: &GrayImage, grid_n: usize, p_hide: f64, fill: f64, rng: &mut R) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut data = img.pixels().to_vec();
    for cell in hidden_cells(w, h, grid_n, p_hide, rng) {
        for y in cell.y0..cell.y1 {
            data[y * w + cell.x0..y * w + cell.x1].fill(fill);
        }
    }
    GrayImage::from_clamped(w, h, data)
}

/// Sampled parameters of one over-exposure spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spot {
    pub cx: usize,
    pub cy: usize,
    /// Radius in pixels.
    pub radius: f64,
    pub intensity: f64,
}

/// Adds radial brightening `I · max(0, 1 − d / r)` for each spot.
pub fn apply_spots(img: &GrayImage, spots: &[Spot]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut data = img.pixels().to_vec();
    for s in spots {
        let r = s.radius.max(f64::MIN_POSITIVE);
        let x_lo = (s.cx as f64 - r).floor().max(0.0) as usize;
        let x_hi = ((s.cx as f64 + r).ceil() as usize).min(w - 1);
        let y_lo = (s.cy as f64 - r).floor().max(0.0) as usize;
        let y_hi = ((s.cy as f64 + r).ceil() as usize).min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d = (x as f64 - s.cx as f64).hypot(y as f64 - s.cy as f64);
                data[y * w + x] += s.intensity * (1.0 - d / r).max(0.0);
            }
        }
    }
    GrayImage::from_clamped(w, h, data)
}

/// Over-exposure at `n_spots` uniformly placed centers. `radius_range` is in
/// pixels.
pub fn exposure_spots<R: Rng + ?Sized>(
    img: &GrayImage,
    n_spots: usize,
    radius_range: (f64, f64),
    intensity_range: (f64, f64),
    rng: &mut R,
) -> GrayImage {
    let spots: Vec<Spot> = (0..n_spots)
        .map(|_| Spot {
            cx: rng.gen_range(0..img.width()),
            cy: rng.gen_range(0..img.height()),
            radius: sample_range(rng, radius_range),
            intensity: sample_range(rng, intensity_range),
        })
        .collect();
    apply_spots(img, &spots)
}

/// Uniform draw from a closed range; a degenerate range returns its bound.
pub(crate) fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn equalizing_a_uniform_histogram_is_identity() {
        let ramp = GrayImage::from_bytes(256, 4, &(0..1024).map(|i| (i % 256) as u8).collect::<Vec<_>>()).unwrap();
        let eq = histogram_equalize(&ramp);
        for (a, b) in eq.pixels().iter().zip(ramp.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
        let flat = GrayImage::filled(8, 8, 0.4).unwrap();
        assert_eq!(histogram_equalize(&flat), flat);
    }

    #[test]
    fn equalization_is_monotone_and_nearly_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let img = random_image(&mut rng, 24, 16);
            let eq = histogram_equalize(&img);
            let (p, q) = (img.pixels(), eq.pixels());
            for i in 0..p.len() {
                for j in 0..p.len() {
                    if p[i] < p[j] {
                        assert!(q[i] <= q[j]);
                    }
                }
            }
            let eq2 = histogram_equalize(&eq);
            let drift = eq2.pixels().iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(drift <= 1.0 / 255.0 + 1e-12, "drift {drift}");
        }
    }

    #[test]
    fn zero_parameters_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = random_image(&mut rng, 20, 10);
        assert_eq!(gaussian_noise(&img, 0.0, &mut rng), img);
        assert_eq!(brightness_contrast(&img, 1.0, 0.0), img);
        assert_eq!(hide_and_seek(&img, 4, 0.0, 0.0, &mut rng), img);
        assert_eq!(exposure_spots(&img, 0, (1.0, 2.0), (0.5, 0.5), &mut rng), img);
    }

    #[test]
    fn brightness_contrast_examples() {
        let img = GrayImage::new(2, 1, vec![0.25, 0.75]).unwrap();
        assert_eq!(brightness_contrast(&img, 2.0, 0.0).pixels(), &[0.5, 1.0]);
    }

    #[test]
    fn noise_is_seeded_and_unbiased() {
        let img = GrayImage::filled(1000, 1000, 0.5).unwrap();
        let a = gaussian_noise(&img, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        let b = gaussian_noise(&img, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let n = img.pixels().len() as f64;
        let mean = a.pixels().iter().map(|v| v - 0.5).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn hide_and_seek_full_and_replayed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 37, 23);
        assert!(hide_and_seek(&img, 5, 1.0, 0.25, &mut rng).pixels().iter().all(|&v| v == 0.25));

        let out = hide_and_seek(&img, 6, 0.3, 0.0, &mut ChaCha8Rng::seed_from_u64(7));
        let cells = hidden_cells(37, 23, 6, 0.3, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(cells, hidden_cells(37, 23, 6, 0.3, &mut ChaCha8Rng::seed_from_u64(7)));
        for y in 0..23 {
            for x in 0..37 {
                if out.get(x, y) != img.get(x, y) {
                    assert!(cells.iter().any(|c| c.contains(x, y)));
                }
            }
        }
    }

    #[test]
    fn bright_spot_saturates_and_decays_radially() {
        let img = GrayImage::filled(64, 48, 0.3).unwrap();
        let spot = Spot { cx: 30, cy: 20, radius: 15.0, intensity: 0.9 };
        let out = apply_spots(&img, &[spot]);
        assert_eq!(out.get(30, 20), 1.0);
        for (dx, dy) in [(1i64, 0i64), (0, 1), (-1, 1), (1, 1), (-1, -1), (2, -1)] {
            let mut prev = out.get(30, 20);
            for step in 1..40 {
                let (x, y) = (30 + dx * step, 20 + dy * step);
                if x < 0 || y < 0 || x >= 64 || y >= 48 {
                    break;
                }
                let v = out.get(x as usize, y as usize);
                assert!(v <= prev);
                prev = v;
            }
        }
    }
}
