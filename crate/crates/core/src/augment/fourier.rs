//! Fourier-domain texture randomization: log-normal noise on the spectrum
//! magnitude with the phase left intact.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::GrayImage;

/// In-place 2D FFT over a row-major `height × width` buffer (unnormalized).
pub fn fft2(data: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    row_fft.process(data);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

pub fn spectrum(img: &GrayImage) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = img.pixels().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut data, img.width(), img.height(), false);
    data
}

/// Per-coefficient multiplicative factors `exp(N(0, strength²))`, equal on
/// conjugate-symmetric pairs and fixed to 1 at DC.
pub fn hermitian_gains<R: Rng + ?Sized>(width: usize, height: usize, strength: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, strength.max(0.0)).expect("finite strength");
    let mut gains: Vec<f64> = (0..width * height).map(|_| normal.sample(rng).exp()).collect();
    for y in 0..height {
        for x in 0..width {
            let idx = y * width + x;
            let mirror = ((height - y) % height) * width + (width - x) % width;
            if mirror < idx {
                gains[idx] = gains[mirror];
            }
        }
    }
    gains[0] = 1.0;
    gains
}

/// The perturbed image before clamping to `[0, 1]`.
pub fn fourier_texture_unclamped<R: Rng + ?Sized>(img: &GrayImage, strength: f64, rng: &mut R) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let gains = hermitian_gains(w, h, strength, rng);
    let mut spec = spectrum(img);
    for (c, g) in spec.iter_mut().zip(&gains) {
        *c *= *g;
    }
    fft2(&mut spec, w, h, true);
    let scale = 1.0 / (w * h) as f64;
    spec.iter().map(|c| c.re * scale).collect()
}

pub fn fourier_texture<R: Rng + ?Sized>(img: &GrayImage, strength: f64, rng: &mut R) -> GrayImage {
    let out = fourier_texture_unclamped(img, strength, rng);
    GrayImage::from_clamped(img.width(), img.height(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_strength_round_trips() {
        let img = random_image(1, 30, 20);
        let out = fourier_texture(&img, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gains_are_conjugate_symmetric() {
        let (w, h) = (7, 6);
        let g = hermitian_gains(w, h, 0.4, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(g[0], 1.0);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(g[y * w + x], g[((h - y) % h) * w + (w - x) % w]);
            }
        }
    }

    #[test]
    fn phase_and_mean_are_preserved() {
        let img = random_image(3, 32, 24);
        let out = fourier_texture_unclamped(&img, 0.3, &mut ChaCha8Rng::seed_from_u64(4));
        let before = spectrum(&img);
        let after_img = GrayImage::from_clamped(32, 24, out.iter().copied());
        let mut after: Vec<Complex<f64>> = out.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft2(&mut after, 32, 24, false);
        for (a, b) in after.iter().zip(&before) {
            if a.norm() > 1e-9 {
                let d = (a.arg() - b.arg()).rem_euclid(2.0 * std::f64::consts::PI);
                assert!(d.min(2.0 * std::f64::consts::PI - d) < 1e-6);
            }
        }
        let mean_in = img.pixels().iter().sum::<f64>() / img.pixels().len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-6);
        let same = fourier_texture(&img, 0.3, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(same, after_img);
    }
}
