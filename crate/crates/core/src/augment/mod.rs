//! Domain randomization and histogram equalization for grayscale imagery.
//!
//! [`rand_policy_apply`] draws three distinct policies out of the six in
//! [`AugPolicy::ALL`] and applies them in draw order. Every operation is a pure
//! function of its input, parameters and RNG state.

mod fourier;
mod image;
mod ops;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::config::{parse_value, Configurable};
use crate::error::{Error, Result};
use crate::rng;

pub use self::fourier::{fft2, fourier_texture, fourier_texture_unclamped, hermitian_gains, spectrum};
pub use self::image::{GrayImage, ImageFormat};
pub use self::ops::{
    apply_spots, brightness_contrast, exposure_spots, gaussian_noise, hidden_cells, hide_and_seek,
    histogram_equalize, CellRect, Spot,
};
use self::ops::sample_range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugPolicy {
    GaussianNoise,
    BrightnessContrast,
    HideAndSeek,
    Exposure,
    Texture,
    NoAugmentation,
}

impl AugPolicy {
    pub const ALL: [AugPolicy; 6] = [
        AugPolicy::GaussianNoise,
        AugPolicy::BrightnessContrast,
        AugPolicy::HideAndSeek,
        AugPolicy::Exposure,
        AugPolicy::Texture,
        AugPolicy::NoAugmentation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugPolicy::GaussianNoise => "gaussian-noise",
            AugPolicy::BrightnessContrast => "brightness-contrast",
            AugPolicy::HideAndSeek => "hide-and-seek",
            AugPolicy::Exposure => "exposure",
            AugPolicy::Texture => "texture",
            AugPolicy::NoAugmentation => "none",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AugPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// Parameter ranges for every policy. Ranges are closed `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AugConfig {
    pub noise_sigma: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub grid: (usize, usize),
    pub p_hide: (f64, f64),
    pub fill: f64,
    pub spots: (usize, usize),
    /// Spot radius as a fraction of the image width.
    pub radius_frac: (f64, f64),
    pub intensity: (f64, f64),
    pub fourier_strength: (f64, f64),
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            noise_sigma: (0.01, 0.05),
            alpha: (0.5, 1.5),
            beta: (-0.2, 0.2),
            grid: (4, 8),
            p_hide: (0.1, 0.3),
            fill: 0.0,
            spots: (1, 5),
            radius_frac: (0.05, 0.25),
            intensity: (0.3, 1.0),
            fourier_strength: (0.1, 0.5),
            seed: 0,
        }
    }
}

fn check_range<T: PartialOrd + fmt::Debug>(name: &str, (lo, hi): (T, T), min: T, max: T) -> Result<()> {
    if lo > hi || lo < min || hi > max {
        return Err(Error::Config(format!("{name}: range ({lo:?}, {hi:?}) must be ordered within [{min:?}, {max:?}]")));
    }
    Ok(())
}

impl Configurable for AugConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "noise_sigma_min" => self.noise_sigma.0 = parse_value(key, v)?,
            "noise_sigma_max" => self.noise_sigma.1 = parse_value(key, v)?,
            "alpha_min" => self.alpha.0 = parse_value(key, v)?,
            "alpha_max" => self.alpha.1 = parse_value(key, v)?,
            "beta_min" => self.beta.0 = parse_value(key, v)?,
            "beta_max" => self.beta.1 = parse_value(key, v)?,
            "grid_min" => self.grid.0 = parse_value(key, v)?,
            "grid_max" => self.grid.1 = parse_value(key, v)?,
            "p_hide_min" => self.p_hide.0 = parse_value(key, v)?,
            "p_hide_max" => self.p_hide.1 = parse_value(key, v)?,
            "fill" => self.fill = parse_value(key, v)?,
            "spots_min" => self.spots.0 = parse_value(key, v)?,
            "spots_max" => self.spots.1 = parse_value(key, v)?,
            "radius_frac_min" => self.radius_frac.0 = parse_value(key, v)?,
            "radius_frac_max" => self.radius_frac.1 = parse_value(key, v)?,
            "intensity_min" => self.intensity.0 = parse_value(key, v)?,
            "intensity_max" => self.intensity.1 = parse_value(key, v)?,
            "fourier_strength_min" => self.fourier_strength.0 = parse_value(key, v)?,
            "fourier_strength_max" => self.fourier_strength.1 = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown augmentation key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        check_range("noise_sigma", self.noise_sigma, 0.0, 1.0)?;
        check_range("alpha", self.alpha, f64::MIN_POSITIVE, 10.0)?;
        check_range("beta", self.beta, -1.0, 1.0)?;
        check_range("grid", self.grid, 1, 256)?;
        check_range("p_hide", self.p_hide, 0.0, 1.0)?;
        check_range("fill", (self.fill, self.fill), 0.0, 1.0)?;
        check_range("spots", self.spots, 0, 64)?;
        check_range("radius_frac", self.radius_frac, f64::MIN_POSITIVE, 2.0)?;
        check_range("intensity", self.intensity, 0.0, 4.0)?;
        check_range("fourier_strength", self.fourier_strength, 0.0, 3.0)
    }
}

/// Applies one policy with parameters sampled from `cfg`.
pub fn apply_policy<R: Rng + ?Sized>(img: &GrayImage, policy: AugPolicy, cfg: &AugConfig, rng: &mut R) -> GrayImage {
    match policy {
        AugPolicy::GaussianNoise => {
            let sigma = sample_range(rng, cfg.noise_sigma);
            gaussian_noise(img, sigma, rng)
        }
        AugPolicy::BrightnessContrast => {
            let alpha = sample_range(rng, cfg.alpha);
            let beta = sample_range(rng, cfg.beta);
            brightness_contrast(img, alpha, beta)
        }
        AugPolicy::HideAndSeek => {
            let grid = rng.gen_range(cfg.grid.0..=cfg.grid.1);
            let p = sample_range(rng, cfg.p_hide);
            hide_and_seek(img, grid, p, cfg.fill, rng)
        }
        AugPolicy::Exposure => {
            let n = rng.gen_range(cfg.spots.0..=cfg.spots.1);
            let w = img.width() as f64;
            let radius = (cfg.radius_frac.0 * w, cfg.radius_frac.1 * w);
            exposure_spots(img, n, radius, cfg.intensity, rng)
        }
        AugPolicy::Texture => {
            let strength = sample_range(rng, cfg.fourier_strength);
            fourier_texture(img, strength, rng)
        }
        AugPolicy::NoAugmentation => img.clone(),
    }
}

/// Draws three distinct policies (partial Fisher-Yates, draw order kept).
pub fn draw_policy_triple<R: Rng + ?Sized>(rng: &mut R) -> [AugPolicy; 3] {
    let mut pool = AugPolicy::ALL;
    for i in 0..3 {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    [pool[0], pool[1], pool[2]]
}

/// Applies a random 3-subset of the six policies consecutively.
pub fn rand_policy_apply<R: Rng + ?Sized>(
    img: &GrayImage,
    cfg: &AugConfig,
    rng: &mut R,
) -> (GrayImage, [AugPolicy; 3]) {
    let triple = draw_policy_triple(rng);
    let out = triple.iter().fold(img.clone(), |acc, &p| apply_policy(&acc, p, cfg, rng));
    (out, triple)
}

/// Augments a batch; image `i` uses child stream `i` of `cfg.seed`.
pub fn augment_batch(images: &[GrayImage], cfg: &AugConfig) -> Vec<(GrayImage, [AugPolicy; 3])> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| rand_policy_apply(img, cfg, &mut rng::child(cfg.seed, i as u64)))
        .collect()
}
