//! File plumbing shared by the subcommands.

use std::fs;
use std::path::Path;

use corrfuse::featmap::read_fmap;
use corrfuse::swap::Image;
use corrfuse::{FeatureMap, Mask};
use image::Rgb;
use serde::Serialize;

use crate::error::{CliError, CliResult, WithPath};

pub fn load_fmap(path: &Path) -> CliResult<FeatureMap> {
    read_fmap(path).at(path)
}

pub fn load_rgb(path: &Path) -> CliResult<Image> {
    Ok(image::open(path).at(path)?.to_rgb8())
}

/// Single-channel mask image; any nonzero luma counts as inside.
pub fn load_mask(path: &Path) -> CliResult<Mask> {
    let img = image::open(path).at(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let bits = img.pixels().map(|p| p.0[0] != 0).collect();
    Ok(Mask::new(h as usize, w as usize, bits)?)
}

pub fn load_optional_mask(path: Option<&Path>) -> CliResult<Option<Mask>> {
    path.map(load_mask).transpose()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).at(path)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_bytes(path, to_json(value)?.as_bytes())
}

pub fn read_json_value(path: &Path) -> CliResult<serde_json::Value> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("invalid JSON: {e}")).at(path))
}

pub fn write_png(path: &Path, img: &Image) -> CliResult<()> {
    write_bytes(path, &corrfuse::viz::encode_png(img)?)
}

/// Palette-indexed PNG of a label grid (one byte per cell).
pub fn write_indexed_png(path: &Path, labels: &[usize], height: usize, width: usize, palette: &[Rgb<u8>]) -> CliResult<()> {
    if palette.len() > 256 {
        return Err(CliError::usage(format!("at most 256 labels fit an indexed PNG, got {}", palette.len())));
    }
    let data: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette.iter().flat_map(|p| p.0).collect::<Vec<u8>>());
        let mut writer = enc.write_header().map_err(|e| CliError::runtime(e.to_string()))?;
        writer.write_image_data(&data).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    write_bytes(path, &out)
}

/// Parses `HxW`.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("expected HxW, got {s:?}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err(format!("dims must be >= 1, got {s:?}"));
    }
    Ok((h, w))
}
