//! Exhaustive cosine nearest-neighbor matching on feature grids.
//!
//! Tokens are L2-normalized once and compared by inner product accumulated in
//! `f64`. Targets are scanned in ascending row-major order and only a strictly
//! better score replaces the current best, so ties resolve to the smallest
//! target index no matter how the source tokens are split across threads.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::{
    bilinear_resize, grid_to_pixel, normalize_in_place, pixel_to_grid, FeatureMap, MapMeta, Mask,
};

const QUERY_TILE: usize = 32;
const TARGET_TILE: usize = 256;

/// Inner product with four fixed lanes; element `i` always lands in lane
/// `i % 4`, so trailing zeros never change the result.
#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

pub(crate) fn normalized_tokens(map: &FeatureMap) -> Vec<f32> {
    let mut data = map.data().to_vec();
    for tok in data.chunks_exact_mut(map.channels()) {
        normalize_in_place(tok);
    }
    data
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Nearest {
    pub index: usize,
    pub score: f64,
}

/// Best target for every query row. `prefer(query, candidate, current)` is
/// consulted only on exact score ties; returning `false` keeps the smaller
/// index.
pub(crate) fn nearest_cosine<F>(
    queries: &[f32],
    targets: &[f32],
    channels: usize,
    allowed: Option<&[bool]>,
    prefer: F,
) -> Vec<Nearest>
where
    F: Fn(usize, usize, usize) -> bool + Sync,
{
    let nq = queries.len() / channels;
    let nt = targets.len() / channels;
    let mut out = vec![
        Nearest {
            index: usize::MAX,
            score: f64::NEG_INFINITY,
        };
        nq
    ];
    out.par_chunks_mut(QUERY_TILE)
        .enumerate()
        .for_each(|(block, chunk)| {
            let q0 = block * QUERY_TILE;
            for t0 in (0..nt).step_by(TARGET_TILE) {
                let t1 = (t0 + TARGET_TILE).min(nt);
                for (qi, best) in chunk.iter_mut().enumerate() {
                    let q = &queries[(q0 + qi) * channels..(q0 + qi + 1) * channels];
                    for t in t0..t1 {
                        if allowed.is_some_and(|a| !a[t]) {
                            continue;
                        }
                        let s = dot_f64(q, &targets[t * channels..(t + 1) * channels]);
                        if s > best.score || (s == best.score && prefer(q0 + qi, t, best.index)) {
                            *best = Nearest { index: t, score: s };
                        }
                    }
                }
            }
        });
    out
}

fn no_preference(_: usize, _: usize, _: usize) -> bool {
    false
}

/// Per-source-token nearest target cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatches {
    pub src_height: usize,
    pub src_width: usize,
    pub tgt_height: usize,
    pub tgt_width: usize,
    /// Row-major target index for each source token.
    pub indices: Vec<usize>,
    /// Cosine similarity of each match.
    pub scores: Vec<f32>,
}

impl DenseMatches {
    pub fn target_cell(&self, src_index: usize) -> (usize, usize) {
        let t = self.indices[src_index];
        (t / self.tgt_width, t % self.tgt_width)
    }
}

fn check_channels(src: &FeatureMap, tgt: &FeatureMap) -> Result<()> {
    if src.channels() != tgt.channels() {
        return Err(Error::shape(format!(
            "source has {} channels, target has {}",
            src.channels(),
            tgt.channels()
        )));
    }
    Ok(())
}

/// Resamples a mask to the given grid and refuses an all-false result.
fn target_filter(mask: Option<&Mask>, h: usize, w: usize) -> Result<Option<Vec<bool>>> {
    match mask {
        None => Ok(None),
        Some(m) => {
            let m = m.resize_nearest(h, w);
            if m.is_empty() {
                return Err(Error::validation("target mask excludes every target token"));
            }
            Ok(Some(m.bits().to_vec()))
        }
    }
}

/// Dense nearest neighbors from every source token to the target grid.
///
/// A target mask at a resolution other than the target grid is resampled to
/// it (nearest, pixel-center).
pub fn nn_dense(src: &FeatureMap, tgt: &FeatureMap, tgt_mask: Option<&Mask>) -> Result<DenseMatches> {
    check_channels(src, tgt)?;
    let allowed = target_filter(tgt_mask, tgt.height(), tgt.width())?;
    let q = normalized_tokens(src);
    let t = normalized_tokens(tgt);
    let best = nearest_cosine(&q, &t, src.channels(), allowed.as_deref(), no_preference);
    Ok(DenseMatches {
        src_height: src.height(),
        src_width: src.width(),
        tgt_height: tgt.height(),
        tgt_width: tgt.width(),
        indices: best.iter().map(|b| b.index).collect(),
        scores: best.iter().map(|b| b.score as f32).collect(),
    })
}

/// Source and target image sizes in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSizes {
    pub src_w: usize,
    pub src_h: usize,
    pub tgt_w: usize,
    pub tgt_h: usize,
}

impl ImageSizes {
    pub fn from_meta(src: &MapMeta, tgt: &MapMeta) -> Self {
        Self {
            src_w: src.source_image_width as usize,
            src_h: src.source_image_height as usize,
            tgt_w: tgt.source_image_width as usize,
            tgt_h: tgt.source_image_height as usize,
        }
    }
}

/// Nearest grid cell of a pixel coordinate, clamped to the grid.
pub fn pixel_to_cell(p: f64, image_extent: usize, grid_extent: usize) -> usize {
    pixel_to_grid(p, image_extent, grid_extent)
        .round()
        .clamp(0.0, (grid_extent - 1) as f64) as usize
}

/// Pixel coordinate of a cell center.
pub fn cell_to_pixel(g: usize, image_extent: usize, grid_extent: usize) -> f64 {
    grid_to_pixel(g as f64, image_extent, grid_extent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// `[x, y]` in source pixels.
    pub src: [f64; 2],
    /// `[x, y]` in target pixels.
    pub tgt: [f64; 2],
    pub score: f64,
    /// Set when the query could not be matched (e.g. out of bounds). Entries
    /// stay index-aligned with the query list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Correspondence {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pair_id: String,
    pub feature_tag: String,
    pub entries: Vec<Correspondence>,
}

impl MatchSet {
    pub fn read_json(path: impl AsRef<Path>) -> Result<MatchSet> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn in_bounds(p: [f64; 2], w: usize, h: usize) -> bool {
    p.iter().all(|v| v.is_finite()) && p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64
}

/// Transfers source keypoints (`[x, y]` pixels) to the target image through
/// the dense nearest neighbor of their grid cell.
///
/// Out-of-bounds keypoints produce an entry with `error` set and a `[-1, -1]`
/// target so the output stays aligned with `keypoints`.
pub fn transfer_keypoints(
    src: &FeatureMap,
    tgt: &FeatureMap,
    keypoints: &[[f64; 2]],
    sizes: ImageSizes,
    tgt_mask: Option<&Mask>,
) -> Result<MatchSet> {
    check_channels(src, tgt)?;
    let mut set = MatchSet {
        pair_id: String::new(),
        feature_tag: src.meta().model_tag.clone(),
        entries: Vec::with_capacity(keypoints.len()),
    };
    if keypoints.is_empty() {
        return Ok(set);
    }
    if [sizes.src_w, sizes.src_h, sizes.tgt_w, sizes.tgt_h].contains(&0) {
        return Err(Error::invalid("image sizes must be >= 1"));
    }
    let allowed = target_filter(tgt_mask, tgt.height(), tgt.width())?;

    let cells: Vec<Option<usize>> = keypoints
        .iter()
        .map(|&p| {
            in_bounds(p, sizes.src_w, sizes.src_h).then(|| {
                let gx = pixel_to_cell(p[0], sizes.src_w, src.width());
                let gy = pixel_to_cell(p[1], sizes.src_h, src.height());
                gy * src.width() + gx
            })
        })
        .collect();

    let c = src.channels();
    let mut queries = Vec::new();
    for cell in cells.iter().flatten() {
        queries.extend_from_slice(src.token(*cell));
    }
    for q in queries.chunks_exact_mut(c) {
        normalize_in_place(q);
    }
    let targets = normalized_tokens(tgt);
    let mut best = nearest_cosine(&queries, &targets, c, allowed.as_deref(), no_preference).into_iter();

    for (&p, cell) in keypoints.iter().zip(&cells) {
        let entry = match cell {
            Some(_) => {
                let b = best.next().expect("one result per valid query");
                let (ty, tx) = (b.index / tgt.width(), b.index % tgt.width());
                Correspondence {
                    src: p,
                    tgt: [
                        cell_to_pixel(tx, sizes.tgt_w, tgt.width()),
                        cell_to_pixel(ty, sizes.tgt_h, tgt.height()),
                    ],
                    score: b.score,
                    error: None,
                }
            }
            None => Correspondence {
                src: p,
                tgt: [-1.0, -1.0],
                score: 0.0,
                error: Some("out_of_bounds".into()),
            },
        };
        set.entries.push(entry);
    }
    Ok(set)
}

/// Per-cell displacement field (pixels) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    du: Vec<f32>,
    dv: Vec<f32>,
    valid: Mask,
}

impl FlowField {
    pub fn new(height: usize, width: usize, du: Vec<f32>, dv: Vec<f32>, valid: Mask) -> Result<Self> {
        let n = height * width;
        if n == 0 || du.len() != n || dv.len() != n || valid.dims() != (height, width) {
            return Err(Error::shape(format!(
                "flow components do not match {height}x{width}"
            )));
        }
        for i in 0..n {
            if valid.bits()[i] && !(du[i].is_finite() && dv[i].is_finite()) {
                return Err(Error::Validation(format!("non-finite flow at valid cell {i}")));
            }
        }
        Ok(Self {
            height,
            width,
            du,
            dv,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn du(&self) -> &[f32] {
        &self.du
    }

    pub fn dv(&self) -> &[f32] {
        &self.dv
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    pub fn at(&self, row: usize, col: usize) -> (f32, f32) {
        let i = row * self.width + col;
        (self.du[i], self.dv[i])
    }
}

/// Dense semantic flow from source to target, sampled at `out_dims`
/// (`(height, width)`).
///
/// The grid-level flow is upsampled bilinearly with pixel-center alignment.
/// `valid` is `src_mask` resampled to `out_dims` (all cells when absent).
/// Image sizes come from each map's metadata.
pub fn dense_flow(
    src: &FeatureMap,
    tgt: &FeatureMap,
    src_mask: Option<&Mask>,
    tgt_mask: Option<&Mask>,
    out_dims: (usize, usize),
) -> Result<FlowField> {
    let (out_h, out_w) = out_dims;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("flow output dims must be >= 1"));
    }
    let nn = nn_dense(src, tgt, tgt_mask)?;
    let sizes = ImageSizes::from_meta(src.meta(), tgt.meta());
    let (sw, sh) = (src.width(), src.height());
    let mut grid = Vec::with_capacity(sw * sh * 2);
    for gy in 0..sh {
        for gx in 0..sw {
            let (ty, tx) = nn.target_cell(gy * sw + gx);
            let du = cell_to_pixel(tx, sizes.tgt_w, tgt.width()) - cell_to_pixel(gx, sizes.src_w, sw);
            let dv = cell_to_pixel(ty, sizes.tgt_h, tgt.height()) - cell_to_pixel(gy, sizes.src_h, sh);
            grid.push(du as f32);
            grid.push(dv as f32);
        }
    }
    let grid = FeatureMap::new(sh, sw, 2, grid, src.meta().clone())?;
    let up = bilinear_resize(&grid, out_h, out_w)?;
    let (du, dv) = up.tokens().map(|t| (t[0], t[1])).unzip();
    let valid = match src_mask {
        Some(m) => m.resize_nearest(out_h, out_w),
        None => Mask::full(out_h, out_w),
    };
    FlowField::new(out_h, out_w, du, dv, valid)
}

pub const SFLW_MAGIC: &[u8; 4] = b"SFLW";
pub const SFLW_VERSION: u32 = 1;

/// `"SFLW" | version u32 | H u32 | W u32 | H*W (du, dv) f32 | H*W mask bytes`,
/// little-endian.
pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let n = flow.height * flow.width;
    let mut out = Vec::with_capacity(16 + n * 9);
    out.extend_from_slice(SFLW_MAGIC);
    for v in [SFLW_VERSION, flow.height as u32, flow.width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..n {
        out.extend_from_slice(&flow.du[i].to_le_bytes());
        out.extend_from_slice(&flow.dv[i].to_le_bytes());
    }
    out.extend(flow.valid.bits().iter().map(|&b| b as u8));
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 || &bytes[..4] != SFLW_MAGIC {
        return Err(Error::Format("missing SFLW magic".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Corrupt("truncated SFLW header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != SFLW_VERSION as usize {
        return Err(Error::Format(format!("unsupported SFLW version {}", word(0))));
    }
    let (h, w) = (word(1), word(2));
    let n = h
        .checked_mul(w)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Corrupt(format!("bad flow dims {h}x{w}")))?;
    if bytes.len() != 16 + n * 9 {
        return Err(Error::Corrupt(format!(
            "SFLW body has {} bytes, {h}x{w} needs {}",
            bytes.len() - 16,
            n * 9
        )));
    }
    let body = &bytes[16..];
    let f = |i: usize| f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap());
    let du = (0..n).map(|i| f(2 * i)).collect();
    let dv = (0..n).map(|i| f(2 * i + 1)).collect();
    let mut bits = Vec::with_capacity(n);
    for &b in &body[8 * n..] {
        match b {
            0 => bits.push(false),
            1 => bits.push(true),
            other => return Err(Error::Corrupt(format!("mask byte {other} is not 0/1"))),
        }
    }
    FlowField::new(h, w, du, dv, Mask::new(h, w, bits)?)
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flow(&std::fs::read(path)?)
}

pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_flow(flow)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(h, w, c, MapMeta::new(w as u32 * 8, h as u32 * 8), |_, _, _| {
            rng.random_range(-1.0..1.0)
        })
        .unwrap()
    }

    /// Target whose column `x` holds source column `(x - 1) mod W`.
    fn shifted_right(src: &FeatureMap) -> FeatureMap {
        let (h, w, c) = (src.height(), src.width(), src.channels());
        FeatureMap::from_fn(h, w, c, src.meta().clone(), |y, x, ch| {
            src.token_at(y, (x + w - 1) % w)[ch]
        })
        .unwrap()
    }

    /// Naive double loop on raw tokens.
    fn oracle(src: &FeatureMap, tgt: &FeatureMap) -> Vec<usize> {
        let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        (0..src.num_tokens())
            .map(|i| {
                let a = src.token(i);
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..tgt.num_tokens() {
                    let b = tgt.token(j);
                    let cos = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>()
                        / (norm(a) * norm(b));
                    if cos > best.1 {
                        best = (j, cos);
                    }
                }
                best.0
            })
            .collect()
    }

    #[test]
    fn self_match_is_identity() {
        let m = random_map(7, 9, 5, 1);
        let nn = nn_dense(&m, &m, None).unwrap();
        assert_eq!(nn.indices, (0..63).collect::<Vec<_>>());
        assert!(nn.scores.iter().all(|&s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn shift_is_inverted() {
        let src = random_map(6, 8, 4, 2);
        let tgt = shifted_right(&src);
        let nn = nn_dense(&src, &tgt, None).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(nn.target_cell(y * 8 + x), (y, (x + 1) % 8));
            }
        }
    }

    #[test]
    fn ties_take_smallest_index() {
        let meta = MapMeta::new(4, 4);
        let src = FeatureMap::new(1, 1, 2, vec![1.0, 0.0], meta.clone()).unwrap();
        let tgt = FeatureMap::new(1, 4, 2, vec![0.0, 1.0, 2.0, 0.0, 3.0, 0.0, -1.0, 0.0], meta).unwrap();
        assert_eq!(nn_dense(&src, &tgt, None).unwrap().indices, vec![1]);
    }

    #[test]
    fn mask_restricts_and_empty_mask_errors() {
        let m = random_map(3, 3, 4, 3);
        let mut mask = Mask::full(3, 3);
        mask.set(1, 1, false);
        let nn = nn_dense(&m, &m, Some(&mask)).unwrap();
        assert_ne!(nn.indices[4], 4);
        assert!(nn.indices.iter().all(|&i| i != 4));
        assert!(nn_dense(&m, &m, Some(&Mask::empty(3, 3))).is_err());
        let other = random_map(3, 3, 5, 3);
        assert!(matches!(nn_dense(&m, &other, None), Err(Error::Shape(_))));
    }

    #[test]
    fn l2_and_cosine_agree_on_normalized_inputs() {
        let src = crate::featmap::l2_normalize(&random_map(6, 6, 8, 4));
        let tgt = crate::featmap::l2_normalize(&random_map(5, 7, 8, 5));
        let nn = nn_dense(&src, &tgt, None).unwrap();
        for i in 0..src.num_tokens() {
            let a = src.token(i);
            let by_l2 = (0..tgt.num_tokens())
                .map(|j| {
                    let d: f64 = a.iter().zip(tgt.token(j)).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
                    (j, d)
                })
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            assert_eq!(nn.indices[i], by_l2.0);
        }
    }

    #[test]
    fn transfer_self_at_cell_centers() {
        let m = random_map(4, 5, 6, 6);
        let sizes = ImageSizes { src_w: 40, src_h: 32, tgt_w: 40, tgt_h: 32 };
        let kps: Vec<[f64; 2]> = (0..4)
            .flat_map(|gy| (0..5).map(move |gx| [cell_to_pixel(gx, 40, 5), cell_to_pixel(gy, 32, 4)]))
            .collect();
        let set = transfer_keypoints(&m, &m, &kps, sizes, None).unwrap();
        for (e, k) in set.entries.iter().zip(&kps) {
            assert_eq!(e.tgt, *k);
            assert!(e.is_valid());
        }
    }

    #[test]
    fn transfer_corner_and_out_of_bounds() {
        let m = random_map(4, 4, 3, 7);
        let sizes = ImageSizes { src_w: 16, src_h: 16, tgt_w: 16, tgt_h: 16 };
        let set = transfer_keypoints(&m, &m, &[[0.0, 0.0], [16.0, 3.0], [-1.0, 2.0]], sizes, None).unwrap();
        assert_eq!(set.entries.len(), 3);
        assert_eq!(set.entries[0].tgt, [1.5, 1.5]);
        assert!(set.entries[1].error.is_some() && set.entries[2].error.is_some());
        let empty = transfer_keypoints(&m, &m, &[], sizes, None).unwrap();
        assert!(empty.entries.is_empty());
    }

    #[test]
    fn self_flow_is_zero() {
        let m = random_map(5, 6, 4, 8);
        let flow = dense_flow(&m, &m, None, None, (40, 48)).unwrap();
        assert!(flow.du().iter().chain(flow.dv()).all(|&v| v == 0.0));
        assert_eq!(flow.valid().count(), 40 * 48);
        let none = dense_flow(&m, &m, Some(&Mask::empty(5, 6)), None, (5, 6)).unwrap();
        assert_eq!(none.valid().count(), 0);
    }

    #[test]
    fn column_shift_gives_constant_flow() {
        let src = random_map(4, 6, 5, 9);
        let tgt = shifted_right(&src);
        // image 48x32 -> 8 px per cell
        let flow = dense_flow(&src, &tgt, None, None, (32, 48)).unwrap();
        for y in 0..32 {
            // columns whose bilinear support stays away from the wrap-around column
            for x in 0..36 {
                assert_eq!(flow.at(y, x), (8.0, 0.0), "({y}, {x})");
            }
        }
    }

    #[test]
    fn flow_file_round_trip_and_errors() {
        let mut valid = Mask::full(2, 3);
        valid.set(0, 1, false);
        let flow = FlowField::new(2, 3, vec![0.5, 1.0, -2.0, 3.0, 0.0, 4.5], vec![1.0; 6], valid).unwrap();
        let bytes = encode_flow(&flow).unwrap();
        assert_eq!(bytes.len(), 16 + 6 * 9);
        assert_eq!(decode_flow(&bytes).unwrap(), flow);
        assert!(matches!(decode_flow(b"FLOWxxxxxxxxxxxxxxxx"), Err(Error::Format(_))));
        assert!(matches!(decode_flow(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn match_set_json_schema() {
        let set = MatchSet {
            pair_id: "p".into(),
            feature_tag: "fused".into(),
            entries: vec![Correspondence { src: [1.0, 2.0], tgt: [3.0, 4.0], score: 0.5, error: None }],
        };
        let v: serde_json::Value = serde_json::from_str(&set.to_json().unwrap()).unwrap();
        assert_eq!(v["entries"][0]["src"], serde_json::json!([1.0, 2.0]));
        assert!(v["entries"][0].get("error").is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matches_naive_oracle(seed in 0u64..10_000, h in 1usize..10, w in 1usize..10, c in 1usize..12) {
            let src = random_map(h, w, c, seed);
            let tgt = random_map(w, h + 1, c, seed + 1);
            let nn = nn_dense(&src, &tgt, None).unwrap();
            prop_assert_eq!(nn.indices, oracle(&src, &tgt));
        }
    }
}
