//! PNG reading and writing. Values are treated as linear in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use voxfield_core::image::RgbImage;

use crate::error::{format_err, io_err, Result};

/// Decoded colour plus the alpha channel when the file has one.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub rgb: RgbImage,
    pub alpha: Option<Vec<f64>>,
}

pub fn read_png(path: &Path) -> Result<LoadedImage> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(format_err(path, format!("unsupported bit depth {other:?}"))),
    };
    let has_alpha = matches!(
        info.color_type,
        png::ColorType::Rgba | png::ColorType::GrayscaleAlpha
    );
    let color = if has_alpha { channels - 1 } else { channels };
    let mut pixels = Vec::with_capacity(w * h);
    let mut alpha = has_alpha.then(|| Vec::with_capacity(w * h));
    for px in samples.chunks_exact(channels) {
        pixels.push(if color >= 3 {
            [px[0], px[1], px[2]]
        } else {
            [px[0]; 3]
        });
        if let Some(a) = alpha.as_mut() {
            a.push(px[channels - 1]);
        }
    }
    Ok(LoadedImage {
        rgb: RgbImage::new(w, h, pixels)?,
        alpha,
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_raw(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| format_err(path, e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| format_err(path, e.to_string()))?;
    writer.finish().map_err(|e| format_err(path, e.to_string()))
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let data: Vec<u8> = img.pixels.iter().flat_map(|p| p.map(quantize)).collect();
    write_raw(path, img.width, img.height, png::ColorType::Rgb, &data)
}

/// Writes straight (non-premultiplied) colour with an alpha channel.
pub fn write_png_rgba(path: &Path, img: &RgbImage, alpha: &[f64]) -> Result<()> {
    if alpha.len() != img.pixels.len() {
        return Err(format_err(path, "alpha length does not match the image"));
    }
    let data: Vec<u8> = img
        .pixels
        .iter()
        .zip(alpha)
        .flat_map(|(p, &a)| [quantize(p[0]), quantize(p[1]), quantize(p[2]), quantize(a)])
        .collect();
    write_raw(path, img.width, img.height, png::ColorType::Rgba, &data)
}

/// Single-channel image, row-major.
pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(format_err(
            path,
            "value count does not match the image size",
        ));
    }
    let data: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    write_raw(path, width, height, png::ColorType::Grayscale, &data)
}
