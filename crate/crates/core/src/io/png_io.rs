use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::image::Image;

/// 8-bit quantization: clamp to `[0, 1]`, scale by 255, round half up.
pub fn to_byte(v: f64) -> u8 {
    let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (c * 255.0 + 0.5).floor() as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Reads an 8-bit (or expandable) PNG as linear RGB in `[0, 1]`. Alpha is
/// dropped, gray is replicated.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Format(format!("{}: unsupported bit depth", path.display())));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => {
            return Err(Error::Format(format!("{}: indexed color not expanded", path.display())));
        }
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf[..info.buffer_size()].chunks_exact(channels).take(w * h) {
        if channels < 3 {
            let g = from_byte(px[0]);
            data.extend_from_slice(&[g, g, g]);
        } else {
            data.extend(px[..3].iter().map(|&b| from_byte(b)));
        }
    }
    Ok(Image::from_data(w, h, data))
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    let bytes: Vec<u8> = image.data.iter().map(|&v| to_byte(v)).collect();
    writer.write_image_data(&bytes).map_err(fmt)?;
    writer.finish().map_err(fmt)
}
