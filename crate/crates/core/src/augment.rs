//! Image augmentations that form the positive view of each sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{luma, ImageTensor, CHANNELS};

pub const BLUR_KERNEL: usize = 5;
pub const BLUR_SIGMA: f64 = 1.0;

/// Enabled transforms and their parameter ranges; validated on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    blur: bool,
    contrast: Option<(f32, f32)>,
    saturation: Option<(f32, f32)>,
    crop: Option<(f32, f32)>,
}

impl AugmentPolicy {
    pub fn new(
        blur: bool,
        contrast: Option<(f32, f32)>,
        saturation: Option<(f32, f32)>,
        crop: Option<(f32, f32)>,
    ) -> Result<Self> {
        if !blur && contrast.is_none() && saturation.is_none() && crop.is_none() {
            return Err(Error::InvalidArgument("augmentation policy enables no transform".into()));
        }
        for (name, range) in [("contrast", contrast), ("saturation", saturation)] {
            if let Some((lo, hi)) = range {
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return Err(Error::InvalidArgument(format!("{name} range ({lo}, {hi}) is invalid")));
                }
            }
        }
        if let Some((lo, hi)) = crop {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidArgument(format!("crop scale range ({lo}, {hi}) must lie in (0, 1]")));
            }
        }
        Ok(Self { blur, contrast, saturation, crop })
    }

    /// Blur, high contrast, high saturation and a mild crop.
    pub fn standard() -> Self {
        Self { blur: true, contrast: Some((1.8, 3.0)), saturation: Some((1.8, 3.0)), crop: Some((0.8, 1.0)) }
    }

    /// Blur only, for sketch-vs-photo style datasets.
    pub fn blur_only() -> Self {
        Self { blur: true, contrast: None, saturation: None, crop: None }
    }

    pub fn blur(&self) -> bool {
        self.blur
    }

    pub fn contrast(&self) -> Option<(f32, f32)> {
        self.contrast
    }

    pub fn saturation(&self) -> Option<(f32, f32)> {
        self.saturation
    }

    pub fn crop(&self) -> Option<(f32, f32)> {
        self.crop
    }

    /// Applies every enabled transform (crop, blur, contrast, saturation).
    /// Pure in `(policy, image, seed)`.
    pub fn apply(&self, image: &ImageTensor, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = image.clone();
        if let Some((lo, hi)) = self.crop {
            let scale = sample(&mut rng, lo, hi);
            let ch = ((image.height() as f32 * scale).round() as usize).clamp(1, image.height());
            let cw = ((image.width() as f32 * scale).round() as usize).clamp(1, image.width());
            let top = rng.random_range(0..=image.height() - ch);
            let left = rng.random_range(0..=image.width() - cw);
            out = crop_resize(&out, top, left, ch, cw);
        }
        if self.blur {
            out = gaussian_blur(&out, &gaussian_kernel(BLUR_KERNEL, BLUR_SIGMA));
        }
        if let Some((lo, hi)) = self.contrast {
            out = adjust_contrast(&out, sample(&mut rng, lo, hi));
        }
        if let Some((lo, hi)) = self.saturation {
            out = adjust_saturation(&out, sample(&mut rng, lo, hi));
        }
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }
}

fn sample(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable blur with edge-replicating borders.
pub fn gaussian_blur(image: &ImageTensor, taps: &[f64]) -> ImageTensor {
    let (h, w) = (image.height(), image.width());
    let half = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let xx = (x as isize + k as isize - half).clamp(0, w as isize - 1) as usize;
                    acc += t * image.get(y, xx, c) as f64;
                }
                tmp[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let yy = (y as isize + k as isize - half).clamp(0, h as isize - 1) as usize;
                    acc += t * tmp[(yy * w + x) * CHANNELS + c];
                }
                out.set(y, x, c, acc as f32);
            }
        }
    }
    out
}

/// `mean + factor * (pixel - mean)` with `mean` the image's gray mean.
pub fn adjust_contrast(image: &ImageTensor, factor: f32) -> ImageTensor {
    let mean = image.gray_mean();
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (mean + factor * (*v - mean)).clamp(0.0, 1.0);
    }
    out
}

/// Interpolates (factor < 1) or extrapolates (factor > 1) away from each pixel's gray value.
pub fn adjust_saturation(image: &ImageTensor, factor: f32) -> ImageTensor {
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        let gray = luma(px);
        for v in px.iter_mut() {
            *v = (gray + factor * (*v - gray)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Crops the window `[top, top+ch) x [left, left+cw)` and resizes it back to
/// the full frame with bilinear interpolation (pixel-centre aligned).
pub fn crop_resize(image: &ImageTensor, top: usize, left: usize, ch: usize, cw: usize) -> ImageTensor {
    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    let sy = ch as f32 / h as f32;
    let sx = cw as f32 / w as f32;
    for y in 0..h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f32);
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        let y1 = (y0 + 1).min(ch - 1);
        for x in 0..w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f32);
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let x1 = (x0 + 1).min(cw - 1);
            for c in 0..CHANNELS {
                let p = |yy: usize, xx: usize| image.get(top + yy, left + xx, c);
                let top_row = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
                let bottom_row = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
                out.set(y, x, c, top_row * (1.0 - ty) + bottom_row * ty);
            }
        }
    }
    out
}
