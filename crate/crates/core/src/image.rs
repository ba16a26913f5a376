use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// H x W x 3 image with intensities in [0, 1], stored row-major (HWC).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "image {height}x{width}x{CHANNELS} needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rounds every intensity to the nearest of the 256 levels of an 8-bit PNG.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn squared_distance(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        writer.write_image_data(&bytes)?;
        Ok(())
    }

    /// Loads an 8-bit (or 16-bit, stripped) PNG as RGB; gray and alpha are expanded or dropped.
    pub fn load_png(path: &Path) -> Result<Self> {
        let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info()?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let src_channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => 3,
        };
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for p in 0..w * h {
            let px = &buf[p * src_channels..(p + 1) * src_channels];
            let rgb = match src_channels {
                1 | 2 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        }
        Self::new(h, w, data)
    }

    /// Mean of the luma (Rec. 601 weights) over all pixels.
    pub fn gray_mean(&self) -> f32 {
        let n = (self.height * self.width) as f32;
        self.data.chunks_exact(3).map(luma).sum::<f32>() / n
    }
}

#[inline]
pub fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Packs images into an NCHW batch tensor.
pub fn to_batch(images: &[&ImageTensor]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Empty("image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut data = vec![0.0f32; images.len() * CHANNELS * plane];
    for (n, img) in images.iter().enumerate() {
        if img.height != h || img.width != w {
            return Err(Error::Shape(format!(
                "image batch mixes {}x{} with {h}x{w}",
                img.height, img.width
            )));
        }
        for (p, px) in img.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[(n * CHANNELS + c) * plane + p] = px[c];
            }
        }
    }
    Tensor::new(&[images.len(), CHANNELS, h, w], data)
}
