//! Feature-map data model, the FMAP binary format and grid resampling.
//!
//! FMAP layout (all integers little-endian):
//!
//! ```text
//! "FMAP" | version u32 = 1 | H u32 | W u32 | C u32 | meta_len u32
//!        | meta: meta_len bytes of UTF-8 JSON (MapMeta)
//!        | payload: H*W*C f32, row-major, channel-last
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;
const FMAP_HEADER_LEN: usize = 24;

/// Image-space metadata carried alongside a feature grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapMeta {
    pub source_image_width: u32,
    pub source_image_height: u32,
    #[serde(default)]
    pub model_tag: String,
    /// Extraction parameters such as timestep, layer index or facet. A sorted
    /// map so the serialized header is deterministic.
    #[serde(default)]
    pub extraction_params: BTreeMap<String, String>,
}

impl MapMeta {
    pub fn new(source_image_width: u32, source_image_height: u32) -> Self {
        Self {
            source_image_width,
            source_image_height,
            model_tag: String::new(),
            extraction_params: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = tag.into();
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.extraction_params.insert(key.into(), value.into());
        self
    }

    fn validate(&self) -> Result<()> {
        if self.source_image_width == 0 || self.source_image_height == 0 {
            return Err(Error::Validation(format!(
                "source image dims must be >= 1, got {}x{}",
                self.source_image_width, self.source_image_height
            )));
        }
        Ok(())
    }
}

/// An `height x width` grid of `channels`-dimensional descriptors, stored
/// row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    meta: MapMeta,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        meta: MapMeta,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "feature map dims must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::invalid("feature map dims overflow"))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        meta.validate()?;
        Ok(Self {
            height,
            width,
            channels,
            data,
            meta,
        })
    }

    /// Builds a map by evaluating `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        meta: MapMeta,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data, meta)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn meta(&self) -> &MapMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: MapMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn meta_mut(&mut self) -> &mut MapMeta {
        &mut self.meta
    }

    /// Token at row-major index `i`.
    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn token_at(&self, row: usize, col: usize) -> &[f32] {
        self.token(row * self.width + col)
    }

    pub fn tokens(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Concatenates maps of identical spatial dims along the channel axis.
    /// Metadata is taken from the first map.
    pub fn concat_channels(maps: &[FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate an empty list of maps"))?;
        let (h, w) = (first.height, first.width);
        if let Some(m) = maps.iter().find(|m| m.height != h || m.width != w) {
            return Err(Error::shape(format!(
                "cannot concatenate {}x{} with {h}x{w}",
                m.height, m.width
            )));
        }
        let channels: usize = maps.iter().map(|m| m.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for m in maps {
                data.extend_from_slice(m.token(i));
            }
        }
        FeatureMap::new(h, w, channels, data, first.meta.clone())
    }
}

/// Maps a pixel coordinate to a continuous grid coordinate under pixel-center
/// alignment: cell `i` covers `[i, i+1)` in its own units and is sampled at its
/// center.
pub fn pixel_to_grid(p: f64, image_extent: usize, grid_extent: usize) -> f64 {
    (p + 0.5) * grid_extent as f64 / image_extent as f64 - 0.5
}

/// Inverse of [`pixel_to_grid`].
pub fn grid_to_pixel(g: f64, image_extent: usize, grid_extent: usize) -> f64 {
    (g + 0.5) * image_extent as f64 / grid_extent as f64 - 0.5
}

/// Interpolation taps along one axis: `(lo, hi, frac)` with edges clamped.
pub(crate) fn taps(dst: usize, dst_extent: usize, src_extent: usize) -> (usize, usize, f64) {
    let s = pixel_to_grid(dst as f64, dst_extent, src_extent).clamp(0.0, (src_extent - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src_extent - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resampling with pixel-center alignment and clamped edges.
///
/// Channel count and metadata are preserved.
pub fn bilinear_resize(map: &FeatureMap, new_h: usize, new_w: usize) -> Result<FeatureMap> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid(format!(
            "target dims must be >= 1, got {new_h}x{new_w}"
        )));
    }
    if new_h == map.height && new_w == map.width {
        return Ok(map.clone());
    }
    let data = resize_rows(map, new_h, new_w, 0..new_h);
    FeatureMap::new(new_h, new_w, map.channels, data, map.meta.clone())
}

/// Rows `rows` of the `new_h x new_w` bilinear resize, without materializing
/// the rest of the output.
pub(crate) fn resize_rows(
    map: &FeatureMap,
    new_h: usize,
    new_w: usize,
    rows: std::ops::Range<usize>,
) -> Vec<f32> {
    let c = map.channels;
    let xtaps: Vec<_> = (0..new_w).map(|x| taps(x, new_w, map.width)).collect();
    let mut data = Vec::with_capacity(rows.len() * new_w * c);
    for y in rows {
        let (y0, y1, fy) = taps(y, new_h, map.height);
        for &(x0, x1, fx) in &xtaps {
            let a = map.token_at(y0, x0);
            let b = map.token_at(y0, x1);
            let d = map.token_at(y1, x0);
            let e = map.token_at(y1, x1);
            for ch in 0..c {
                data.push(lerp2(a[ch], b[ch], d[ch], e[ch], fx, fy));
            }
        }
    }
    data
}

/// `a + (b - a) * t` form keeps constants exact.
#[inline]
pub(crate) fn lerp2(tl: f32, tr: f32, bl: f32, br: f32, fx: f64, fy: f64) -> f32 {
    let (tl, tr, bl, br) = (tl as f64, tr as f64, bl as f64, br as f64);
    let top = tl + (tr - tl) * fx;
    let bottom = bl + (br - bl) * fx;
    (top + (bottom - top) * fy) as f32
}

/// Scales a single vector to unit Euclidean norm in place; all-zero vectors are
/// left untouched.
pub fn normalize_in_place(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Per-token L2 normalization. All-zero tokens stay zero.
pub fn l2_normalize(map: &FeatureMap) -> FeatureMap {
    let mut out = map.clone();
    for tok in out.data.chunks_exact_mut(out.channels) {
        normalize_in_place(tok);
    }
    out
}

/// Serializes a map to FMAP bytes. Fails on invariant violations (e.g. NaN).
pub fn encode_fmap(map: &FeatureMap) -> Result<Vec<u8>> {
    if let Some(pos) = map.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "refusing to write non-finite value at flat index {pos}"
        )));
    }
    map.meta.validate()?;
    let meta = serde_json::to_vec(&map.meta)?;
    let mut out = Vec::with_capacity(FMAP_HEADER_LEN + meta.len() + map.data.len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    for v in [
        FMAP_VERSION,
        dim_u32(map.height)?,
        dim_u32(map.width)?,
        dim_u32(map.channels)?,
        dim_u32(meta.len())?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&meta);
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} does not fit in u32")))
}

/// Parses FMAP bytes.
pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 || &bytes[..4] != FMAP_MAGIC {
        return Err(Error::Format("missing FMAP magic".into()));
    }
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::Corrupt("truncated FMAP header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FMAP_VERSION {
        return Err(Error::Format(format!("unsupported FMAP version {version}")));
    }
    let (h, w, c, meta_len) = (
        word(1) as usize,
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
    );
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Corrupt(format!("zero dimension in header {h}x{w}x{c}")));
    }
    let meta_end = FMAP_HEADER_LEN
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("metadata extends past end of file".into()))?;
    let meta: MapMeta = serde_json::from_slice(&bytes[FMAP_HEADER_LEN..meta_end])
        .map_err(|e| Error::Format(format!("bad metadata JSON: {e}")))?;
    let payload = &bytes[meta_end..];
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt("header dims overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload has {} bytes, header {h}x{w}x{c} needs {expected}",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::new(h, w, c, data, meta)
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_fmap(&std::fs::read(path)?)
}

pub fn write_fmap(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_fmap(map)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Boolean occupancy grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dims must be >= 1"));
        }
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "mask has {} cells, expected {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Nearest-neighbor resampling with pixel-center alignment.
    pub fn resize_nearest(&self, new_h: usize, new_w: usize) -> Mask {
        if (new_h, new_w) == (self.height, self.width) {
            return self.clone();
        }
        let pick = |d: usize, dst: usize, src: usize| -> usize {
            let s = pixel_to_grid(d as f64, dst, src).round();
            s.clamp(0.0, (src - 1) as f64) as usize
        };
        Mask::from_fn(new_h, new_w, |y, x| {
            self.get(
                pick(y, new_h, self.height),
                pick(x, new_w, self.width),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> MapMeta {
        MapMeta::new(32, 32)
            .with_tag("sd.up.2")
            .with_param("t", "100")
    }

    fn map(h: usize, w: usize, c: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, c, data, meta()).unwrap()
    }

    #[test]
    fn single_zero_value_payload() {
        let m = map(1, 1, 1, vec![0.0]);
        let bytes = encode_fmap(&m).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 0]);
        let meta_len = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 24 + meta_len + 4);
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn write_is_deterministic_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = map(2, 3, 2, (0..12).map(|i| i as f32 * 0.37 - 1.0).collect());
        let (a, b) = (dir.path().join("a.fmap"), dir.path().join("b.fmap"));
        write_fmap(&m, &a).unwrap();
        write_fmap(&m, &b).unwrap();
        let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(ba, bb);
        let back = read_fmap(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_fmap(&back).unwrap(), ba);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_fmap(&map(1, 1, 1, vec![1.0])).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_fmap(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut bytes = encode_fmap(&map(1, 1, 1, vec![1.0])).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_fmap(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn short_payload_is_corrupt() {
        let bytes = encode_fmap(&map(2, 2, 3, vec![0.5; 12])).unwrap();
        // drop one float: 11 floats for a 2x2x3 header
        let truncated = &bytes[..bytes.len() - 4];
        assert!(matches!(decode_fmap(truncated), Err(Error::Corrupt(_))));
    }

    #[test]
    fn nan_payload_is_validation_error() {
        let mut bytes = encode_fmap(&map(1, 1, 2, vec![0.5, 0.25])).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_fmap(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_rejected_before_write() {
        let mut m = map(1, 1, 1, vec![0.0]);
        m.data[0] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.fmap");
        assert!(matches!(write_fmap(&m, &path), Err(Error::Validation(_))));
        assert!(!path.exists());
    }

    #[test]
    fn resize_identity() {
        let m = map(3, 2, 2, (0..12).map(|i| i as f32).collect());
        assert_eq!(bilinear_resize(&m, 3, 2).unwrap(), m);
    }

    #[test]
    fn resize_pixel_center_row() {
        let m = map(1, 2, 1, vec![0.0, 1.0]);
        let r = bilinear_resize(&m, 1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(r.meta(), m.meta());
    }

    #[test]
    fn resize_rejects_zero_dims() {
        let m = map(1, 1, 1, vec![1.0]);
        assert!(bilinear_resize(&m, 0, 3).is_err());
    }

    #[test]
    fn normalize_examples() {
        let m = map(1, 3, 2, vec![3.0, 4.0, 0.6, 0.8, 0.0, 0.0]);
        let n = l2_normalize(&m);
        assert!((n.token(0)[0] - 0.6).abs() < 1e-7 && (n.token(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(n.token(1), m.token(1));
        assert_eq!(n.token(2), &[0.0, 0.0]);
    }

    #[test]
    fn mask_nearest_resize() {
        let m = Mask::from_fn(2, 2, |y, x| y == 0 && x == 1);
        let r = m.resize_nearest(4, 4);
        assert_eq!(r.count(), 4);
        assert!(r.get(0, 2) && r.get(1, 3) && !r.get(2, 2));
    }

    fn arb_map() -> impl Strategy<Value = FeatureMap> {
        (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(-10.0f32..10.0, h * w * c)
                .prop_map(move |data| map(h, w, c, data))
        })
    }

    proptest! {
        #[test]
        fn fmap_round_trip_bit_exact(m in arb_map()) {
            let bytes = encode_fmap(&m).unwrap();
            let back = decode_fmap(&bytes).unwrap();
            prop_assert_eq!(encode_fmap(&back).unwrap(), bytes);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn normalize_is_idempotent(m in arb_map()) {
            let once = l2_normalize(&m);
            let twice = l2_normalize(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn resize_preserves_channel_range(m in arb_map(), nh in 1usize..9, nw in 1usize..9) {
            let r = bilinear_resize(&m, nh, nw).unwrap();
            for ch in 0..m.channels() {
                let (lo, hi) = m.tokens().map(|t| t[ch])
                    .fold((f32::MAX, f32::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
                for t in r.tokens() {
                    prop_assert!(t[ch] >= lo && t[ch] <= hi);
                }
            }
        }

        #[test]
        fn resize_preserves_constants(
            h in 1usize..6, w in 1usize..6, nh in 1usize..12, nw in 1usize..12, v in -5.0f32..5.0,
        ) {
            let m = map(h, w, 2, vec![v; h * w * 2]);
            let up = bilinear_resize(&m, nh, nw).unwrap();
            prop_assert!(up.data().iter().all(|&x| x == v));
            let back = bilinear_resize(&up, h, w).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
