//! PNG conversion: RGB images as 8-bit RGB, alpha maps as 16-bit grayscale,
//! masks as 8-bit grayscale 0/255.

use std::path::Path;

use glados_core::image::{Mask, Plane, RgbImage};

use super::FormatError;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

pub fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let data: Vec<u8> = img.as_slice().iter().flat_map(|p| p.map(to_u8)).collect();
    encode(img.width(), img.height(), png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

pub fn encode_alpha(alpha: &Plane<f64>) -> Vec<u8> {
    let data: Vec<u8> = alpha
        .as_slice()
        .iter()
        .flat_map(|a| ((a.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    encode(alpha.width(), alpha.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let data: Vec<u8> = mask.as_slice().iter().map(|m| if *m { 255 } else { 0 }).collect();
    encode(mask.width(), mask.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &data)
}

struct Decoded {
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8], path: &Path) -> Result<Decoded, FormatError> {
    let err = |e: png::DecodingError| FormatError::malformed(path, e.to_string());
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(err)?;
    let mut data = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut data).map_err(err)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        w: info.width as usize,
        h: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

/// Decodes any 8-bit gray, gray-alpha, RGB, or RGBA PNG into RGB (alpha is
/// dropped).
pub fn decode_rgb(bytes: &[u8], path: &Path) -> Result<RgbImage, FormatError> {
    let d = decode(bytes, path)?;
    if d.depth != png::BitDepth::Eight {
        return Err(FormatError::malformed(path, "expected an 8-bit image"));
    }
    let channels = match d.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(FormatError::malformed(path, "unexpanded palette")),
    };
    let px = |k: usize| {
        let p = &d.data[k * channels..];
        let c = |i: usize| p[i] as f64 / 255.0;
        if channels < 3 {
            [c(0); 3]
        } else {
            [c(0), c(1), c(2)]
        }
    };
    Ok(RgbImage::from_vec(d.w, d.h, (0..d.w * d.h).map(px).collect()).unwrap())
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<Mask, FormatError> {
    let d = decode(bytes, path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Eight {
        return Err(FormatError::malformed(path, "masks are 8-bit grayscale"));
    }
    Ok(Mask::from_vec(d.w, d.h, d.data.iter().map(|v| *v >= 128).collect()).unwrap())
}

pub fn decode_alpha(bytes: &[u8], path: &Path) -> Result<Plane<f64>, FormatError> {
    let d = decode(bytes, path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(FormatError::malformed(path, "alpha maps are 16-bit grayscale"));
    }
    let data = d
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
        .collect();
    Ok(Plane::from_vec(d.w, d.h, data).unwrap())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<(), FormatError> {
    super::write(path, &encode_rgb(img))
}

pub fn save_alpha(alpha: &Plane<f64>, path: &Path) -> Result<(), FormatError> {
    super::write(path, &encode_alpha(alpha))
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<(), FormatError> {
    super::write(path, &encode_mask(mask))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, FormatError> {
    decode_rgb(&super::read(path)?, path)
}

pub fn load_mask(path: &Path) -> Result<Mask, FormatError> {
    decode_mask(&super::read(path)?, path)
}

/// Rounds every channel to the nearest 8-bit level, i.e. what a PNG round
/// trip would produce.
pub fn quantize(img: &RgbImage) -> RgbImage {
    img.map(|p| p.map(|c| to_u8(c) as f64 / 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_quantization() {
        let img = RgbImage::from_fn(7, 5, |x, y| [x as f64 / 7.0, y as f64 / 5.0, 0.333]);
        let back = decode_rgb(&encode_rgb(&img), Path::new("t")).unwrap();
        assert_eq!(back, quantize(&img));
        assert_eq!(quantize(&back), back);
    }

    #[test]
    fn mask_and_alpha_round_trip() {
        let m = Mask::from_fn(6, 4, |x, y| (x + y) % 3 == 0);
        assert_eq!(decode_mask(&encode_mask(&m), Path::new("t")).unwrap(), m);
        let a = Plane::from_fn(6, 4, |x, _| x as f64 / 5.0);
        let back = decode_alpha(&encode_alpha(&a), Path::new("t")).unwrap();
        for (p, q) in a.as_slice().iter().zip(back.as_slice()) {
            assert!((p - q).abs() <= 0.5 / 65535.0);
        }
    }
}
