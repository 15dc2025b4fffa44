//! Stochastic tile augmentations producing two views per tile.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Augmentation settings. Jitter factors are drawn uniformly from
/// `[1 - strength, 1 + strength]`: brightness scales every channel,
/// contrast scales the distance to the mean luminance of the view and
/// saturation scales the distance of each pixel to its own luminance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Fraction of the tile area kept by the square random crop.
    pub crop_scale_range: (f64, f64),
    pub flip_probability: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub grayscale_probability: f64,
    pub output_size: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale_range: (0.4, 1.0),
            flip_probability: 0.5,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            grayscale_probability: 0.2,
            output_size: 16,
        }
    }
}

impl AugmentConfig {
    /// Full-tile crop and nothing else.
    pub fn identity(output_size: u32) -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            flip_probability: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            grayscale_probability: 0.0,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let strength = |s: f64| (0.0..1.0).contains(&s);
        let ok = lo > 0.0
            && lo <= hi
            && hi <= 1.0
            && prob(self.flip_probability)
            && prob(self.grayscale_probability)
            && strength(self.brightness)
            && strength(self.contrast)
            && strength(self.saturation)
            && self.output_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid augmentation config {self:?}")))
        }
    }

    fn crop_side(&self, short_side: u32, scale: f64) -> u32 {
        ((scale.sqrt() * f64::from(short_side)).floor() as u32).clamp(1, short_side)
    }
}

fn luminance(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn factor<R: Rng + ?Sized>(rng: &mut R, strength: f64) -> f32 {
    if strength > 0.0 {
        rng.random_range(1.0 - strength..=1.0 + strength) as f32
    } else {
        1.0
    }
}

/// One random view of `tile`, `output_size` pixels square.
pub fn augment_view<R: Rng + ?Sized>(tile: &RgbImage, cfg: &AugmentConfig, rng: &mut R) -> Result<RgbImage> {
    cfg.validate()?;
    let (w, h) = tile.dimensions();
    let short = w.min(h);
    if cfg.crop_side(short, cfg.crop_scale_range.0) < cfg.output_size {
        return Err(Error::invalid(format!(
            "{w}x{h} tile is too small for a {} px view at crop scale {}",
            cfg.output_size, cfg.crop_scale_range.0
        )));
    }

    let (lo, hi) = cfg.crop_scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let side = cfg.crop_side(short, scale);
    let x = rng.random_range(0..=w - side);
    let y = rng.random_range(0..=h - side);
    let mut view = imageops::crop_imm(tile, x, y, side, side).to_image();
    if side != cfg.output_size {
        view = imageops::resize(&view, cfg.output_size, cfg.output_size, FilterType::Triangle);
    }
    if rng.random_bool(cfg.flip_probability) {
        imageops::flip_horizontal_in_place(&mut view);
    }

    let b = factor(rng, cfg.brightness);
    let c = factor(rng, cfg.contrast);
    let s = factor(rng, cfg.saturation);
    let gray = rng.random_bool(cfg.grayscale_probability);
    if b == 1.0 && c == 1.0 && s == 1.0 && !gray {
        return Ok(view);
    }

    let mut px: Vec<[f32; 3]> = view
        .pixels()
        .map(|p| p.0.map(|v| f32::from(v) * b))
        .collect();
    let mean = px.iter().map(|&p| luminance(p)).sum::<f32>() / px.len() as f32;
    for p in &mut px {
        for v in p.iter_mut() {
            *v = mean + c * (*v - mean);
        }
        let l = luminance(*p);
        for v in p.iter_mut() {
            *v = l + s * (*v - l);
        }
        if gray {
            *p = [luminance(*p); 3];
        }
    }
    for (dst, p) in view.pixels_mut().zip(px) {
        *dst = Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8));
    }
    Ok(view)
}

/// Two independent views of one tile.
pub fn augment_pair<R: Rng + ?Sized>(
    tile: &RgbImage,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(RgbImage, RgbImage)> {
    Ok((augment_view(tile, cfg, rng)?, augment_view(tile, cfg, rng)?))
}
