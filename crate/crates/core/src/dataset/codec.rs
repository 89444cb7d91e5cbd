//! On-disk formats: SPM1 soft maps, DPT1 depth maps, 8-bit PNG label maps and
//! invalid masks, and plain-text match lists.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::MatchSet;
use crate::types::{ClassCatalog, DepthMap, HardLabelMap, InvalidMask, RawSoftMap};

const SPM_MAGIC: &[u8; 4] = b"SPM1";
const DPT_MAGIC: &[u8; 4] = b"DPT1";

fn format_err(format: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        format,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn header_u32(bytes: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap())
}

fn floats(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

/// Parses magic, `n` dimensions and the float payload; checks the payload
/// length against the product of the dimensions.
fn decode_floats<const N: usize>(bytes: &[u8], magic: &[u8; 4], format: &'static str) -> Result<([usize; N], Vec<f32>)> {
    let header = 4 + 4 * N;
    if bytes.len() < header || &bytes[..4] != magic {
        return Err(format_err(format, "missing magic or truncated header"));
    }
    let dims: [usize; N] = std::array::from_fn(|i| header_u32(bytes, i) as usize);
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(format, "dimensions overflow"))?;
    if bytes.len() - header != count {
        return Err(format_err(
            format,
            format!("header {dims:?} needs {count} payload bytes, found {}", bytes.len() - header),
        ));
    }
    Ok((dims, floats(&bytes[header..])))
}

fn encode_floats(magic: &[u8; 4], dims: &[usize], values: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len());
    out.extend_from_slice(magic);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_spm(raw: &RawSoftMap) -> Vec<u8> {
    encode_floats(SPM_MAGIC, &[raw.height, raw.width, raw.channels], raw.data.iter().copied())
}

pub fn decode_spm(bytes: &[u8]) -> Result<RawSoftMap> {
    let ([height, width, channels], data) = decode_floats::<3>(bytes, SPM_MAGIC, "SPM1")?;
    Ok(RawSoftMap {
        height,
        width,
        channels,
        data,
    })
}

pub fn read_spm(path: &Path) -> Result<RawSoftMap> {
    decode_spm(&read(path)?)
}

pub fn write_spm(path: &Path, raw: &RawSoftMap) -> Result<()> {
    write(path, &encode_spm(raw))
}

/// Depth values are stored as `f32`.
pub fn encode_dpt(depth: &DepthMap) -> Vec<u8> {
    encode_floats(DPT_MAGIC, &[depth.height(), depth.width()], depth.values().iter().map(|&d| d as f32))
}

pub fn decode_dpt(bytes: &[u8], max_depth: f64) -> Result<DepthMap> {
    let ([height, width], data) = decode_floats::<2>(bytes, DPT_MAGIC, "DPT1")?;
    DepthMap::new(height, width, data.into_iter().map(f64::from).collect(), max_depth)
}

pub fn read_dpt(path: &Path, max_depth: f64) -> Result<DepthMap> {
    decode_dpt(&read(path)?, max_depth)
}

pub fn write_dpt(path: &Path, depth: &DepthMap) -> Result<()> {
    write(path, &encode_dpt(depth))
}

fn encode_gray_png(width: usize, height: usize, values: Vec<u8>) -> Result<Vec<u8>> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, values)
        .ok_or_else(|| format_err("PNG", "buffer size does not match dimensions"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decodes an 8-bit single-channel PNG. Other pixel layouts are rejected
/// rather than converted.
fn decode_gray_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Ok((h as usize, w as usize, g.into_raw()))
        }
        other => Err(format_err(
            "PNG",
            format!("expected 8-bit grayscale, found {:?}", other.color()),
        )),
    }
}

pub fn encode_label_png(labels: &HardLabelMap) -> Result<Vec<u8>> {
    encode_gray_png(labels.width(), labels.height(), labels.labels().to_vec())
}

pub fn decode_label_png(bytes: &[u8], catalog: &ClassCatalog) -> Result<HardLabelMap> {
    let (h, w, v) = decode_gray_png(bytes)?;
    HardLabelMap::new(h, w, v, catalog)
}

pub fn read_label_png(path: &Path, catalog: &ClassCatalog) -> Result<HardLabelMap> {
    decode_label_png(&read(path)?, catalog)
}

pub fn write_label_png(path: &Path, labels: &HardLabelMap) -> Result<()> {
    write(path, &encode_label_png(labels)?)
}

/// Invalid pixels are written as 1, valid ones as 0.
pub fn encode_mask_png(mask: &InvalidMask) -> Result<Vec<u8>> {
    let (h, w) = mask.dims();
    encode_gray_png(w, h, mask.mask().iter().map(|&m| m as u8).collect())
}

/// Accepts 0 for valid and either 1 or 255 for invalid.
pub fn decode_mask_png(bytes: &[u8]) -> Result<InvalidMask> {
    let (h, w, v) = decode_gray_png(bytes)?;
    let mask = v
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 | 255 => Ok(true),
            _ => Err(format_err("mask PNG", format!("value {b} at pixel {i}"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    InvalidMask::new(h, w, mask)
}

pub fn read_mask_png(path: &Path) -> Result<InvalidMask> {
    decode_mask_png(&read(path)?)
}

pub fn write_mask_png(path: &Path, mask: &InvalidMask) -> Result<()> {
    write(path, &encode_mask_png(mask)?)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = read(path)?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}

/// One match per line: `x_day y_day x_dark y_dark`. Text after `#` is a
/// comment.
pub fn parse_matches(text: &str) -> Result<MatchSet> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let v: Vec<f64> = body
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err("match file", format!("line {}: {e}", n + 1)))?;
        if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
            return Err(format_err("match file", format!("line {}: expected 4 finite numbers", n + 1)));
        }
        pairs.push((Vector2::new(v[0], v[1]), Vector2::new(v[2], v[3])));
    }
    Ok(MatchSet::from_pairs(pairs))
}

pub fn format_matches(matches: &MatchSet) -> String {
    let mut out = String::from("# x_day y_day x_dark y_dark\n");
    for m in matches {
        out.push_str(&format!("{} {} {} {}\n", m.day.x, m.day.y, m.dark.x, m.dark.y));
    }
    out
}

pub fn read_match_file(path: &Path) -> Result<MatchSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text)
}

pub fn write_match_file(path: &Path, matches: &MatchSet) -> Result<()> {
    write(path, format_matches(matches).as_bytes())
}
