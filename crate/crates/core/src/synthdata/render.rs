//! Procedural glyph renderer.
//!
//! The relevant class picks the glyph geometry, the two secondary
//! attributes pick its size and position, and the nuisance domain picks a
//! rendering style (filled photo-like, edge sketch, inverted palette,
//! striped texture). Styles change the colour of nearly every pixel, while
//! the glyph only covers a fraction of the frame, so pixel statistics are
//! dominated by the nuisance attribute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AttributeSpec, RelevantLabels};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

const SIZES: [f32; 4] = [0.42, 0.52, 0.62, 0.72];
const SUPERSAMPLE: usize = 3;

/// True when the point `(u, v)` in glyph-local coordinates (roughly
/// `[-1, 1]^2`, `v` pointing down) lies inside the glyph of `class`.
fn inside(class: usize, u: f32, v: f32) -> bool {
    let r = (u * u + v * v).sqrt();
    match class {
        0 => r <= 0.95,
        1 => u.abs() <= 0.8 && v.abs() <= 0.8,
        2 => v <= 0.8 && v >= -0.9 && u.abs() <= (v + 0.9) / 1.7 * 0.95,
        3 => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
        4 => (0.55..=0.95).contains(&r),
        5 => u.abs() + v.abs() <= 1.0,
        6 => u.abs() <= 0.9 && ((v - 0.5).abs() <= 0.22 || (v + 0.5).abs() <= 0.22),
        7 => u.abs() <= 0.9 && v.abs() <= 0.9 && ((u - v).abs() <= 0.4 || (u + v).abs() <= 0.4),
        8 => {
            (u >= -0.85 && u <= -0.3 && v.abs() <= 0.9) || (v >= 0.35 && v <= 0.9 && u.abs() <= 0.85)
        }
        9 => (v >= -0.9 && v <= -0.35 && u.abs() <= 0.9) || (u.abs() <= 0.27 && v.abs() <= 0.9),
        c => {
            // procedural star polygons for larger class sets
            let lobes = (3 + c % 5) as f32;
            let phase = (c / 5) as f32 * 0.618_034 * std::f32::consts::TAU;
            let theta = v.atan2(u);
            let depth = 0.15 + 0.05 * ((c / 25) % 4) as f32;
            r <= 0.75 + depth * (lobes * theta + phase).cos()
        }
    }
}

/// Fractional glyph coverage of every pixel.
fn coverage(res: usize, labels: &RelevantLabels, spec: &AttributeSpec) -> Vec<f32> {
    let scale = SIZES[labels.size.min(SIZES.len() - 1)];
    let side = (spec.jitters as f32).sqrt().ceil().max(1.0) as usize;
    let (jx, jy) = (labels.jitter % side, labels.jitter / side);
    let offset = |j: usize| {
        if side <= 1 {
            0.0
        } else {
            (j as f32 / (side - 1) as f32 * 2.0 - 1.0) * 0.18
        }
    };
    let (cx, cy) = (offset(jx), offset(jy));
    let mut cov = vec![0.0f32; res * res];
    let step = 2.0 / res as f32;
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for py in 0..res {
        for px in 0..res {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = -1.0 + (px as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32) * step;
                    let y = -1.0 + (py as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32) * step;
                    if inside(labels.class, (x - cx) / scale, (y - cy) / scale) {
                        hits += 1;
                    }
                }
            }
            cov[py * res + px] = hits as f32 / n;
        }
    }
    cov
}

/// Morphological gradient of the coverage map over a 3x3 window.
fn edges(cov: &[f32], size: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; cov.len()];
    for y in 0..size {
        for x in 0..size {
            let (mut lo, mut hi) = (1.0f32, 0.0f32);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (yy, xx) = (y as i32 + dy, x as i32 + dx);
                    let v = if yy < 0 || xx < 0 || yy >= size as i32 || xx >= size as i32 {
                        0.0
                    } else {
                        cov[yy as usize * size + xx as usize]
                    };
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            out[y * size + x] = (hi - lo).clamp(0.0, 1.0);
        }
    }
    out
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Renders one sample. Deterministic in `(labels, nuisance, seed, size)`.
pub fn render_sample(
    spec: &AttributeSpec,
    labels: &RelevantLabels,
    nuisance: usize,
    seed: u64,
    size: usize,
) -> Result<ImageTensor> {
    spec.check_labels(labels, nuisance)?;
    if size < 8 {
        return Err(Error::InvalidArgument(format!("image size {size} is too small to render")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.015).expect("valid sigma");

    let cov = coverage(size, labels, spec);
    let style = nuisance % 4;
    let rotation = (nuisance / 4) % 3;
    let edge = if style == 1 { edges(&cov, size) } else { Vec::new() };

    let mut img = ImageTensor::filled(size, size, [0.0; 3]);
    for y in 0..size {
        let t = y as f32 / (size - 1) as f32;
        for x in 0..size {
            let c = cov[y * size + x];
            let rgb = match style {
                0 => {
                    let bg = mix([0.82, 0.81, 0.78], [0.60, 0.63, 0.67], t);
                    let fg = mix([0.85, 0.30, 0.18], [0.55, 0.15, 0.10], t);
                    mix(bg, fg, c)
                }
                1 => {
                    let bg = [0.97, 0.97, 0.96];
                    mix(bg, [0.08, 0.08, 0.10], edge[y * size + x])
                }
                2 => mix([0.05, 0.06, 0.16], [0.96, 0.92, 0.55], c),
                _ => {
                    let phase = (x + y) as f32 / 3.0;
                    let bg = if (phase.floor() as i64) % 2 == 0 { [0.30, 0.58, 0.46] } else { [0.62, 0.84, 0.62] };
                    mix(bg, [0.12, 0.14, 0.48], c)
                }
            };
            for ch in 0..3 {
                let v = rgb[(ch + rotation) % 3] + noise.sample(&mut rng);
                img.set(y, x, ch, v);
            }
        }
    }
    img.quantize();
    Ok(img)
}
