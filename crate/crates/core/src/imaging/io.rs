//! PNG (8/16-bit) and PGM/PPM (binary and plain) image I/O. Values map
//! linearly to `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{ImageTensor, ImagingError, Shape};

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor, ImagingError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| ImagingError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> ImageTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let buf = img.to_luma16();
        let shape = Shape::new(h, w, 1);
        ImageTensor::from_fn(shape, |_, r, q| {
            buf.get_pixel(q as u32, r as u32).0[0] as f64 / 65535.0
        })
    } else {
        let buf = img.to_rgb16();
        let shape = Shape::new(h, w, 3);
        ImageTensor::from_fn(shape, |c, r, q| {
            buf.get_pixel(q as u32, r as u32).0[c] as f64 / 65535.0
        })
    }
}

/// Writes an 8-bit PNG (or PGM/PPM, chosen by extension) after clamping to
/// `[0, 1]`. One- and three-channel images only.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let img = img.clamped01();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = |v: f64| (v * 255.0).round() as u8;
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([q(img.get(0, y as usize, x as usize))])
        })),
        3 => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            let (r, c) = (y as usize, x as usize);
            Rgb([q(img.get(0, r, c)), q(img.get(1, r, c)), q(img.get(2, r, c))])
        })),
        n => {
            return Err(ImagingError::InvalidParameter(format!(
                "cannot export an image with {n} channels"
            )))
        }
    };
    dynamic.save(path).map_err(|e| ImagingError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes a 16-bit grayscale or RGB PNG after clamping to `[0, 1]`.
pub fn save_png16(img: &ImageTensor, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let img = img.clamped01();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = |v: f64| (v * 65535.0).round() as u16;
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([q(img.get(0, y as usize, x as usize))])
        })),
        3 => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
            let (r, c) = (y as usize, x as usize);
            Rgb([q(img.get(0, r, c)), q(img.get(1, r, c)), q(img.get(2, r, c))])
        })),
        n => {
            return Err(ImagingError::InvalidParameter(format!(
                "cannot export an image with {n} channels"
            )))
        }
    };
    dynamic.save(path).map_err(|e| ImagingError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
