//! Pixel-level instance swapping driven by dense correspondence.
//!
//! Both feature maps are bilinearly upsampled to their image resolution, and
//! every source pixel inside the source mask pulls the color of its nearest
//! target pixel (cosine, search restricted to the target mask). The source side
//! is processed in row tiles so only one tile of upsampled source features is
//! alive at a time.

use log::warn;

use crate::error::{Error, Result};
use crate::featmap::{normalize_in_place, resize_rows, FeatureMap, Mask};
use crate::matching::nearest_cosine;

/// 8-bit RGB image.
pub type Image = image::RgbImage;

const ROW_TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapStatus {
    Swapped,
    /// Nothing to swap; the output is the source image.
    EmptySourceMask,
}

#[derive(Debug, Clone)]
pub struct SwapResult {
    pub image: Image,
    pub status: SwapStatus,
    /// Number of source pixels that were replaced.
    pub swapped_pixels: usize,
}

fn check_mask(mask: &Mask, img: &Image, which: &str) -> Result<()> {
    if mask.dims() != (img.height() as usize, img.width() as usize) {
        return Err(Error::shape(format!(
            "{which} mask is {}x{}, image is {}x{}",
            mask.height(),
            mask.width(),
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Transplants target-instance pixels onto the source instance.
///
/// Pixels outside `src_mask` are copied from `src_img` unchanged. When several
/// target pixels tie on similarity (e.g. the clamped border of an upsampled
/// grid), the one closest to the source pixel's position in target
/// coordinates wins, then the lowest row-major index.
pub fn swap_instance(
    src_img: &Image,
    tgt_img: &Image,
    src_feat: &FeatureMap,
    tgt_feat: &FeatureMap,
    src_mask: &Mask,
    tgt_mask: &Mask,
) -> Result<SwapResult> {
    check_mask(src_mask, src_img, "source")?;
    check_mask(tgt_mask, tgt_img, "target")?;
    if src_feat.channels() != tgt_feat.channels() {
        return Err(Error::shape(format!(
            "source features have {} channels, target {}",
            src_feat.channels(),
            tgt_feat.channels()
        )));
    }
    if src_mask.is_empty() {
        warn!("source mask is empty; returning the source image unchanged");
        return Ok(SwapResult {
            image: src_img.clone(),
            status: SwapStatus::EmptySourceMask,
            swapped_pixels: 0,
        });
    }
    if tgt_mask.is_empty() {
        return Err(Error::validation("target mask is empty; nothing to sample"));
    }

    let c = src_feat.channels();
    let (sh, sw) = (src_img.height() as usize, src_img.width() as usize);
    let (th, tw) = (tgt_img.height() as usize, tgt_img.width() as usize);

    // compact list of in-mask target pixels, upsampled and normalized
    let mut tgt_pixels = Vec::with_capacity(tgt_mask.count());
    let mut targets = Vec::with_capacity(tgt_mask.count() * c);
    for row0 in (0..th).step_by(ROW_TILE) {
        let rows = row0..(row0 + ROW_TILE).min(th);
        let tile = resize_rows(tgt_feat, th, tw, rows.clone());
        for (r, y) in rows.enumerate() {
            for x in 0..tw {
                if tgt_mask.get(y, x) {
                    let tok = &tile[(r * tw + x) * c..(r * tw + x + 1) * c];
                    let start = targets.len();
                    targets.extend_from_slice(tok);
                    normalize_in_place(&mut targets[start..]);
                    tgt_pixels.push((x, y));
                }
            }
        }
    }

    let (sx_scale, sy_scale) = (tw as f64 / sw as f64, th as f64 / sh as f64);
    let mut out = src_img.clone();
    let mut swapped = 0;
    for row0 in (0..sh).step_by(ROW_TILE) {
        let rows = row0..(row0 + ROW_TILE).min(sh);
        let tile = resize_rows(src_feat, sh, sw, rows.clone());
        let mut queries = Vec::new();
        let mut positions = Vec::new();
        for (r, y) in rows.enumerate() {
            for x in 0..sw {
                if src_mask.get(y, x) {
                    let start = queries.len();
                    queries.extend_from_slice(&tile[(r * sw + x) * c..(r * sw + x + 1) * c]);
                    normalize_in_place(&mut queries[start..]);
                    positions.push((x, y));
                }
            }
        }
        if positions.is_empty() {
            continue;
        }
        let anchor: Vec<(f64, f64)> = positions
            .iter()
            .map(|&(x, y)| ((x as f64 + 0.5) * sx_scale - 0.5, (y as f64 + 0.5) * sy_scale - 0.5))
            .collect();
        let dist2 = |q: usize, t: usize| {
            let (px, py) = anchor[q];
            let (tx, ty) = tgt_pixels[t];
            (tx as f64 - px).powi(2) + (ty as f64 - py).powi(2)
        };
        let best = nearest_cosine(&queries, &targets, c, None, |q, cand, cur| {
            dist2(q, cand) < dist2(q, cur)
        });
        for (&(x, y), b) in positions.iter().zip(&best) {
            let (tx, ty) = tgt_pixels[b.index];
            out.put_pixel(x as u32, y as u32, *tgt_img.get_pixel(tx as u32, ty as u32));
            swapped += 1;
        }
    }
    Ok(SwapResult {
        image: out,
        status: SwapStatus::Swapped,
        swapped_pixels: swapped,
    })
}
