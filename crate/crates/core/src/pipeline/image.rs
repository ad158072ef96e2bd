use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Side length of the square model input.
pub const MODEL_INPUT_SIZE: usize = 375;

/// A three-channel image stored row-major, channels interleaved (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Preprocess("zero-area image".into()));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Preprocess(format!(
                "buffer of {} values does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, Self::CHANNELS)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * Self::CHANNELS + c]
    }

    #[inline]
    pub(crate) fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Channel-planar (CHW) copy of the data.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * Self::CHANNELS];
        for (i, px) in self.data.chunks_exact(Self::CHANNELS).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    /// Bilinear resample to `(height, width)`.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .ok_or_else(|| Error::Preprocess("inconsistent image buffer".into()))?;
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        let mut data = out.into_raw();
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, data)
    }
}

pub fn decode_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rescales 8-bit RGB intensities to [0, 1] and resamples to the model input
/// size with a bilinear kernel. RGBA input has its alpha channel ignored.
pub fn preprocess(raw: &DynamicImage) -> Result<ImageTensor> {
    preprocess_to(raw, (MODEL_INPUT_SIZE, MODEL_INPUT_SIZE))
}

pub fn preprocess_to(raw: &DynamicImage, (height, width): (usize, usize)) -> Result<ImageTensor> {
    if raw.width() == 0 || raw.height() == 0 {
        return Err(Error::Preprocess("zero-area image".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::Preprocess("zero-area target size".into()));
    }
    let rgb = match raw {
        DynamicImage::ImageRgb8(img) => img.clone(),
        DynamicImage::ImageRgba8(_) => raw.to_rgb8(),
        other => {
            return Err(Error::Preprocess(format!(
                "expected 8-bit RGB input, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    // Rescaling is linear, so doing it before resampling gives the same values
    // as dividing the resampled raster by 255.
    let data: Vec<f32> = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, data)?.resized(height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    #[test]
    fn zero_image_stays_zero() {
        let raw = DynamicImage::ImageRgb8(RgbImage::new(1024, 1024));
        let t = preprocess(&raw).unwrap();
        assert_eq!(t.shape(), (375, 375, 3));
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_image_maps_to_one() {
        let raw = DynamicImage::ImageRgb8(RgbImage::from_pixel(1024, 1024, Rgb([255, 255, 255])));
        let t = preprocess(&raw).unwrap();
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_stays_in_unit_range() {
        let raw = RgbImage::from_fn(1024, 1024, |x, y| {
            if (x / 7 + y / 5) % 2 == 0 {
                Rgb([255, 0, 255])
            } else {
                Rgb([0, 255, 0])
            }
        });
        let t = preprocess(&DynamicImage::ImageRgb8(raw)).unwrap();
        assert_eq!(t.shape(), (375, 375, 3));
        let (lo, hi) = t.min_max();
        assert!(lo >= 0.0 && hi <= 1.0, "{lo} {hi}");
    }

    #[test]
    fn same_size_input_is_only_rescaled() {
        let raw = RgbImage::from_fn(4, 3, |x, y| Rgb([(x * 50) as u8, (y * 80) as u8, 7]));
        let t = preprocess_to(&DynamicImage::ImageRgb8(raw.clone()), (3, 4)).unwrap();
        for (x, y, px) in raw.enumerate_pixels() {
            for c in 0..3 {
                assert_eq!(t.get(y as usize, x as usize, c), px[c] as f32 / 255.0);
            }
        }
    }

    #[test]
    fn non_rgb_and_empty_inputs_are_rejected() {
        let gray = DynamicImage::ImageLuma8(GrayImage::new(8, 8));
        assert!(matches!(preprocess(&gray), Err(Error::Preprocess(_))));
        let empty = DynamicImage::ImageRgb8(RgbImage::new(0, 0));
        assert!(matches!(preprocess(&empty), Err(Error::Preprocess(_))));
    }

    #[test]
    fn chw_layout() {
        let t = ImageTensor::new(1, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.to_chw(), vec![1., 4., 2., 5., 3., 6.]);
    }
}
