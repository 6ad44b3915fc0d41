use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use mutabnet_autodiff::Tensor;

use crate::error::{Error, Result};

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// `[1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.pixels.clone(), &[1, self.height, self.width]).expect("non-empty image")
    }

    /// 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Any readable image, converted to luma and scaled to `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let luma = img.to_luma8();
        Ok(GrayImage {
            width: luma.width() as usize,
            height: luma.height() as usize,
            pixels: luma.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }
}

/// How an original image maps into the square model input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRecord {
    /// Nominal factor `size / max(width, height)`.
    pub scale: f64,
    /// Effective per-axis factors after rounding to whole pixels.
    pub sx: f64,
    pub sy: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub orig_width: usize,
    pub orig_height: usize,
    pub resized_width: usize,
    pub resized_height: usize,
    pub size: usize,
}

/// Aspect-preserving resize so the longer side equals `size`, then zero
/// padding on the right and bottom.
pub fn preprocess_image(img: &GrayImage, size: usize) -> Result<(GrayImage, ScaleRecord)> {
    if img.width == 0 || img.height == 0 || size == 0 {
        return Err(Error::Config(format!(
            "cannot preprocess a {}x{} image to {size}",
            img.width, img.height
        )));
    }
    let scale = size as f64 / img.width.max(img.height) as f64;
    let rw = ((img.width as f64 * scale).round() as usize).clamp(1, size);
    let rh = ((img.height as f64 * scale).round() as usize).clamp(1, size);
    let resized = if rw == img.width && rh == img.height {
        img.clone()
    } else {
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
            img.width as u32,
            img.height as u32,
            img.pixels.iter().map(|&v| v as f32).collect(),
        )
        .expect("buffer size");
        let out = imageops::resize(&buf, rw as u32, rh as u32, FilterType::Triangle);
        GrayImage {
            width: rw,
            height: rh,
            pixels: out.as_raw().iter().map(|&v| f64::from(v).clamp(0.0, 1.0)).collect(),
        }
    };
    let mut canvas = GrayImage::new(size, size);
    for y in 0..rh {
        let row = &resized.pixels[y * rw..(y + 1) * rw];
        canvas.pixels[y * size..y * size + rw].copy_from_slice(row);
    }
    let record = ScaleRecord {
        scale,
        sx: rw as f64 / img.width as f64,
        sy: rh as f64 / img.height as f64,
        pad_x: 0.0,
        pad_y: 0.0,
        orig_width: img.width,
        orig_height: img.height,
        resized_width: rw,
        resized_height: rh,
        size,
    };
    Ok((canvas, record))
}

/// Zero-mean, unit-variance rescaling of the pixel values.
pub fn standardize(img: &mut GrayImage) {
    let n = img.pixels.len() as f64;
    let mean = img.pixels.iter().sum::<f64>() / n;
    let var = img.pixels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    img.pixels.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

pub type BBox = [f64; 4];

/// Maps pixel bboxes into `[0, 1]` model coordinates; returns how many
/// components needed clamping.
pub fn normalize_bboxes(bboxes: &[Option<BBox>], rec: &ScaleRecord) -> (Vec<Option<BBox>>, usize) {
    let s = rec.size as f64;
    let mut clamped = 0;
    let out = bboxes
        .iter()
        .map(|b| {
            b.map(|[x0, y0, x1, y1]| {
                let raw = [
                    (x0 * rec.sx + rec.pad_x) / s,
                    (y0 * rec.sy + rec.pad_y) / s,
                    (x1 * rec.sx + rec.pad_x) / s,
                    (y1 * rec.sy + rec.pad_y) / s,
                ];
                raw.map(|v| {
                    let c = v.clamp(0.0, 1.0);
                    if c != v {
                        clamped += 1;
                    }
                    c
                })
            })
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} bbox components clamped into the image");
    }
    (out, clamped)
}

/// Inverse of [`normalize_bboxes`] for one box.
pub fn denormalize_bbox(b: BBox, rec: &ScaleRecord) -> BBox {
    let s = rec.size as f64;
    [
        (b[0] * s - rec.pad_x) / rec.sx,
        (b[1] * s - rec.pad_y) / rec.sy,
        (b[2] * s - rec.pad_x) / rec.sx,
        (b[3] * s - rec.pad_y) / rec.sy,
    ]
}
