//! Grayscale image files: PNG (8/16-bit, via the `png` crate) and binary PGM.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::geometry::{BinaryMask, Spacing};

use super::GrayImage;

/// Sample depth of a stored image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Integer samples exactly as stored in a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawGray {
    pub width: usize,
    pub height: usize,
    /// Largest representable sample (255, 65535, or a PGM maxval).
    pub max_value: u16,
    pub samples: Vec<u16>,
}

impl RawGray {
    pub fn to_image(&self, spacing: Spacing) -> Result<GrayImage> {
        let m = self.max_value as f64;
        GrayImage::new(self.height, self.width, self.samples.iter().map(|&s| s as f64 / m).collect(), spacing)
    }

    pub fn from_image(image: &GrayImage, depth: BitDepth) -> Self {
        let m = depth.max_value();
        Self {
            width: image.width(),
            height: image.height(),
            max_value: m,
            samples: image.data().iter().map(|v| (v.clamp(0.0, 1.0) * m as f64).round() as u16).collect(),
        }
    }
}

enum Format {
    Png,
    Pgm,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "png" => Ok(Format::Png),
        Some(e) if e == "pgm" => Ok(Format::Pgm),
        _ => Err(Error::Image(format!("{}: unsupported extension (expected .png or .pgm)", path.display()))),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RawGray> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let bytes_per = if wide { 2 } else { 1 };
    let sample = |i: usize| -> u16 {
        if wide {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]])
        } else {
            buf[i] as u16
        }
    };
    let px = w * h;
    ensure!(info.buffer_size() >= px * channels * bytes_per, Image, "short png frame");
    let samples = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => (0..px).map(|p| sample(p * channels)).collect(),
        png::ColorType::Rgb | png::ColorType::Rgba => (0..px)
            .map(|p| {
                let s = (0..3).map(|k| sample(p * channels + k) as u32).sum::<u32>();
                ((s + 1) / 3) as u16
            })
            .collect(),
        other => return Err(Error::Image(format!("unsupported png color type {other:?}"))),
    };
    Ok(RawGray { width: w, height: h, max_value: if wide { 65535 } else { 255 }, samples })
}

pub fn encode_png(raw: &RawGray) -> Result<Vec<u8>> {
    let depth = match raw.max_value {
        255 => png::BitDepth::Eight,
        65535 => png::BitDepth::Sixteen,
        m => return Err(Error::Image(format!("png stores maxval 255 or 65535, got {m}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raw.width as u32, raw.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        let data: Vec<u8> = match depth {
            png::BitDepth::Eight => raw.samples.iter().map(|&s| s as u8).collect(),
            _ => raw.samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
        };
        writer.write_image_data(&data).map_err(|e| Error::Image(e.to_string()))?;
        writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(out)
}

/// Binary (P5) PGM. Samples above 255 use two big-endian bytes.
pub fn decode_pgm(bytes: &[u8]) -> Result<RawGray> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        ensure!(pos > start, Image, "truncated pgm header");
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    ensure!(token()? == "P5", Image, "not a binary pgm (P5)");
    let parse = |s: String| s.parse::<usize>().map_err(|_| Error::Image(format!("bad pgm header field `{s}`")));
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    ensure!((1..=65535).contains(&maxval), Image, "pgm maxval {maxval} out of range");
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = width * height * bpp;
    ensure!(bytes.len() >= pos + need, Image, "pgm raster truncated: need {need} bytes");
    let raster = &bytes[pos..pos + need];
    let samples: Vec<u16> = if bpp == 2 {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    ensure!(samples.iter().all(|&s| s as usize <= maxval), Image, "pgm sample exceeds maxval");
    Ok(RawGray { width, height, max_value: maxval as u16, samples })
}

pub fn encode_pgm(raw: &RawGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", raw.width, raw.height, raw.max_value).into_bytes();
    if raw.max_value > 255 {
        out.extend(raw.samples.iter().flat_map(|s| s.to_be_bytes()));
    } else {
        out.extend(raw.samples.iter().map(|&s| s as u8));
    }
    out
}

pub fn read_raw(path: &Path) -> Result<RawGray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = match format_of(path)? {
        Format::Png => decode_png(&bytes),
        Format::Pgm => decode_pgm(&bytes),
    };
    raw.map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn write_raw(raw: &RawGray, path: &Path) -> Result<()> {
    let bytes = match format_of(path)? {
        Format::Png => encode_png(raw)?,
        Format::Pgm => encode_pgm(raw),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Load a grayscale image, scaling samples to `[0, 1]`.
pub fn read_image(path: &Path, spacing: Spacing) -> Result<GrayImage> {
    read_raw(path)?.to_image(spacing)
}

pub fn write_image(image: &GrayImage, path: &Path, depth: BitDepth) -> Result<()> {
    write_raw(&RawGray::from_image(image, depth), path)
}

/// Any nonzero sample is foreground.
pub fn read_mask(path: &Path, spacing: Spacing) -> Result<BinaryMask> {
    let raw = read_raw(path)?;
    BinaryMask::from_bits(raw.height, raw.width, raw.samples.iter().map(|&s| s != 0).collect(), spacing)
}

/// 8-bit, 0 or 255.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let raw = RawGray {
        width: mask.width(),
        height: mask.height(),
        max_value: 255,
        samples: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    };
    write_raw(&raw, path)
}
