//! 8-bit grayscale PNG masks and RGB input images.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::network::SaliencyMap;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

/// ITU-R 601 luma of an 8-bit pixel, rounded half up.
pub fn luma8(r: u8, g: u8, b: u8) -> u8 {
    let s = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((s + 500) / 1000) as u8
}

/// ITU-R 601 luma of a 16-bit pixel, rescaled to 8 bits and rounded half up.
pub fn luma16(r: u16, g: u16, b: u16) -> u8 {
    let s = 299 * u64::from(r) + 587 * u64::from(g) + 114 * u64::from(b);
    ((s + 128_500) / 257_000) as u8
}

/// 16-bit sample rescaled by 1/257 and rounded.
pub fn rescale16(v: u16) -> u8 {
    ((u32::from(v) + 128) / 257) as u8
}

impl MaskImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || samples.len() != width * height {
            return Err(Error::shape("mask", format!("{width}x{height} mask given {} samples", samples.len())));
        }
        Ok(Self { width, height, samples })
    }

    /// Samples mapped to `v / 255`.
    pub fn to_map(&self) -> SaliencyMap {
        let values = self.samples.iter().map(|&v| f64::from(v) / 255.0).collect();
        SaliencyMap::new(self.height, self.width, values).expect("valid extents and range")
    }

    /// Quantise a map as `round(p * 255)`.
    pub fn from_map(map: &SaliencyMap) -> Self {
        let samples = map.values().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        Self { width: map.width(), height: map.height(), samples }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    ImageReader::with_format(BufReader::new(file), ImageFormat::Png)
        .decode()
        .map_err(|e| Error::Decode { path: path.to_path_buf(), detail: e.to_string() })
}

/// Load a PNG as 8-bit grayscale. Color inputs are reduced to luma, 16-bit
/// inputs are rescaled; alpha is ignored.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let samples: Vec<u8> = match &img {
        DynamicImage::ImageLuma8(b) => b.as_raw().clone(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(b) => b.pixels().map(|p| luma8(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(b) => b.pixels().map(|p| luma8(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| rescale16(p.0[0])).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| rescale16(p.0[0])).collect(),
        DynamicImage::ImageRgb16(b) => b.pixels().map(|p| luma16(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba16(b) => b.pixels().map(|p| luma16(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(Error::UnsupportedColor { path: path.to_path_buf(), color: format!("{:?}", other.color()) })
        }
    };
    MaskImage::new(width, height, samples)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &MaskImage) -> Result<()> {
    let path = path.as_ref();
    image::save_buffer_with_format(
        path,
        &mask.samples,
        mask.width as u32,
        mask.height as u32,
        image::ExtendedColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode { path: path.to_path_buf(), detail: other.to_string() },
    })
}

/// Load a PNG as a `(1, 3, H, W)` tensor with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let shape = Shape::new(1, 3, h, w)?;
    let mut data = vec![0.0; shape.numel()];
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f64::from(p.0[c]) / 255.0;
        }
    }
    Tensor::from_vec(shape, data)
}

/// Write the first sample of a `(N, 3, H, W)` tensor as an 8-bit RGB PNG.
pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("save_image", format!("expected 3 channels, got {s}")));
    }
    let plane = s.plane();
    let mut bytes = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            bytes.push((image.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    image::save_buffer_with_format(path, &bytes, s.w as u32, s.h as u32, image::ExtendedColorType::Rgb8, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Encode { path: path.to_path_buf(), detail: other.to_string() },
        })
}
