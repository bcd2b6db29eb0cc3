//! PNG renderings: joint PCA-RGB of a feature pair, flow fields and cluster
//! label maps.

use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb};

use crate::error::{Error, Result};
use crate::featmap::{FeatureMap, Mask};
use crate::matching::{pixel_to_cell, FlowField};
use crate::pca::{fit_pca_exact, Tokens};
use crate::swap::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderKind {
    PcaRgb,
    Flow,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderSpec {
    pub kind: RenderKind,
    pub out_w: usize,
    pub out_h: usize,
}

impl RenderSpec {
    pub fn new(kind: RenderKind, out_w: usize, out_h: usize) -> Result<Self> {
        if out_w == 0 || out_h == 0 {
            return Err(Error::invalid("render dims must be >= 1"));
        }
        Ok(Self { kind, out_w, out_h })
    }
}

pub const INVALID_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
pub const BACKGROUND_TINT: Rgb<u8> = Rgb([255, 140, 0]);

/// Nearest-neighbor upscale of a cell image to `(out_h, out_w)`.
pub fn upscale_nearest(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w) = (img.height() as usize, img.width() as usize);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    Image::from_fn(out_w as u32, out_h as u32, |x, y| {
        let gx = pixel_to_cell(x as f64, out_w, w);
        let gy = pixel_to_cell(y as f64, out_h, h);
        *img.get_pixel(gx as u32, gy as u32)
    })
}

fn grid_mask(mask: Option<&Mask>, map: &FeatureMap) -> Mask {
    match mask {
        Some(m) => m.resize_nearest(map.height(), map.width()),
        None => Mask::full(map.height(), map.width()),
    }
}

/// First three joint principal components of a pair as RGB, one pixel per
/// grid cell.
///
/// The PCA is fit on the in-mask tokens of both maps together; each component
/// is min-max scaled to `[0, 255]` over those same tokens, so equal features
/// get equal colors in both images. A component with zero range renders as
/// 128. Out-of-mask cells are black.
pub fn pca_rgb(
    src: &FeatureMap,
    tgt: &FeatureMap,
    src_mask: Option<&Mask>,
    tgt_mask: Option<&Mask>,
) -> Result<(Image, Image)> {
    if src.channels() != tgt.channels() {
        return Err(Error::shape(format!(
            "source has {} channels, target has {}",
            src.channels(),
            tgt.channels()
        )));
    }
    let c = src.channels();
    let masks = [grid_mask(src_mask, src), grid_mask(tgt_mask, tgt)];
    let maps = [src, tgt];
    let mut fit_data = Vec::new();
    for (map, mask) in maps.iter().zip(&masks) {
        for (tok, &inside) in map.tokens().zip(mask.bits()) {
            if inside {
                fit_data.extend_from_slice(tok);
            }
        }
    }
    let n = fit_data.len() / c;
    if n < 3 {
        return Err(Error::Validation(format!("need at least 3 in-mask tokens, got {n}")));
    }
    let k = c.min(3);
    let model = fit_pca_exact(Tokens::new(&fit_data, n, c)?, k)?;

    let projections: Vec<Vec<Option<Vec<f64>>>> = maps
        .iter()
        .zip(&masks)
        .map(|(map, mask)| {
            map.tokens()
                .zip(mask.bits())
                .map(|(tok, &inside)| inside.then(|| model.project_token(tok)))
                .collect()
        })
        .collect();
    let scale = fit_data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs())).max(1e-30);
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    for p in projections.iter().flatten().flatten() {
        for (r, &v) in ranges.iter_mut().zip(p) {
            *r = (r.0.min(v), r.1.max(v));
        }
    }
    let to_byte = |comp: usize, v: f64| -> u8 {
        let (lo, hi) = ranges[comp];
        if hi - lo <= 1e-9 * scale {
            128
        } else {
            (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8
        }
    };
    let render = |map: &FeatureMap, proj: &[Option<Vec<f64>>]| {
        Image::from_fn(map.width() as u32, map.height() as u32, |x, y| {
            match &proj[y as usize * map.width() + x as usize] {
                None => Rgb([0, 0, 0]),
                Some(p) => {
                    let mut px = [128u8; 3];
                    for (comp, slot) in px.iter_mut().enumerate().take(k) {
                        *slot = to_byte(comp, p[comp]);
                    }
                    Rgb(px)
                }
            }
        })
    };
    Ok((render(src, &projections[0]), render(tgt, &projections[1])))
}

/// HSV with `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let byte = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([byte(r), byte(g), byte(b)])
}

/// Flow coloring: hue from direction, saturation from magnitude relative to
/// the largest valid magnitude, value `0.5 + 0.5 * saturation` so zero flow is
/// a neutral mid-gray. Invalid cells are white; valid cells inside `bg_mask`
/// are blended half-way with orange.
pub fn render_flow(flow: &FlowField, bg_mask: Option<&Mask>) -> Result<Image> {
    let valid = flow.valid();
    if valid.is_empty() {
        return Err(Error::validation("flow has no valid cells to render"));
    }
    let (h, w) = (flow.height(), flow.width());
    let bg = bg_mask.map(|m| m.resize_nearest(h, w));
    let max_mag = (0..h * w)
        .filter(|&i| valid.bits()[i])
        .map(|i| (flow.du()[i] as f64).hypot(flow.dv()[i] as f64))
        .fold(0.0f64, f64::max);
    Ok(Image::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if !valid.get(y, x) {
            return INVALID_COLOR;
        }
        let (du, dv) = flow.at(y, x);
        let (du, dv) = (du as f64, dv as f64);
        let sat = if max_mag > 0.0 { du.hypot(dv) / max_mag } else { 0.0 };
        let hue = dv.atan2(du).to_degrees();
        let px = hsv_to_rgb(hue, sat, 0.5 + 0.5 * sat);
        match &bg {
            Some(m) if m.get(y, x) => Rgb(std::array::from_fn(|c| {
                ((px[c] as u16 + BACKGROUND_TINT[c] as u16) / 2) as u8
            })),
            _ => px,
        }
    }))
}

/// `k` well-spread colors (golden-angle hues).
pub fn cluster_palette(k: usize) -> Vec<Rgb<u8>> {
    (0..k)
        .map(|i| hsv_to_rgb(i as f64 * 137.507_764, 0.75, 0.95))
        .collect()
}

/// Colors a label grid; `relabel[l]` picks the palette slot for label `l`.
pub fn render_labels(labels: &[usize], height: usize, width: usize, relabel: &[usize]) -> Result<Image> {
    if labels.len() != height * width {
        return Err(Error::shape(format!("{} labels for a {height}x{width} grid", labels.len())));
    }
    let palette = cluster_palette(relabel.len());
    if let Some(&bad) = labels.iter().find(|&&l| l >= relabel.len()) {
        return Err(Error::invalid(format!("label {bad} has no palette entry")));
    }
    Ok(Image::from_fn(width as u32, height as u32, |x, y| {
        palette[relabel[labels[y as usize * width + x as usize]]]
    }))
}

/// PNG bytes with fixed encoder settings, so identical images give identical
/// files.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}
