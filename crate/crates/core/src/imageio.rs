//! 8-bit PNG reading and writing. Pixels decode to `value / 255`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::cam::InpaintMask;
use crate::error::{Error, Result};
use crate::types::ImageTensor;

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if !path.is_file() {
        return Err(Error::Load {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
        });
    }
    let img = image::open(path)?;
    let (channels, raw, w, h) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.as_raw().clone(), g.width(), g.height()),
        DynamicImage::ImageRgb8(rgb) => (3, rgb.as_raw().clone(), rgb.width(), rgb.height()),
        other if other.color().has_color() => {
            let rgb = other.to_rgb8();
            (3, rgb.as_raw().clone(), rgb.width(), rgb.height())
        }
        other => {
            let g = other.to_luma8();
            (1, g.as_raw().clone(), g.width(), g.height())
        }
    };
    let data = raw.iter().map(|v| f32::from(*v) / 255.0).collect();
    ImageTensor::new(h as usize, w as usize, channels, data)
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn save_image(image: &ImageTensor, path: &Path) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let bytes: Vec<u8> = image.data().iter().map(|v| to_u8(*v)).collect();
    match image.channels() {
        1 => GrayImage::from_raw(w, h, bytes)
            .expect("buffer size matches")
            .save(path)?,
        3 => RgbImage::from_raw(w, h, bytes)
            .expect("buffer size matches")
            .save(path)?,
        c => return Err(Error::arg(format!("cannot write a {c}-channel image"))),
    }
    Ok(())
}

/// Writes a mask as a 1-bit grayscale PNG.
pub fn save_mask(mask: &InpaintMask, path: &Path) -> Result<()> {
    let (w, h) = (mask.width(), mask.height());
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(&packed)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

/// Reads any grayscale PNG as a mask; nonzero pixels are set.
pub fn load_mask(path: &Path) -> Result<InpaintMask> {
    let img = image::open(path)?.to_luma8();
    let bits = img.as_raw().iter().map(|v| *v > 0).collect();
    InpaintMask::new(img.height() as usize, img.width() as usize, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let img = ImageTensor::new(3, 4, 1, data).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data: Vec<f32> = (0..12).map(|i| (i * 7) as f32 / 255.0).collect();
        let img = ImageTensor::new(2, 2, 3, data).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn one_bit_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let bits: Vec<bool> = (0..9 * 11).map(|i| i % 3 == 0 || i % 7 == 1).collect();
        let m = InpaintMask::new(9, 11, bits).unwrap();
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn missing_image_is_load_error() {
        assert!(matches!(
            load_image(Path::new("/no/such.png")).unwrap_err(),
            Error::Load { .. }
        ));
    }
}
