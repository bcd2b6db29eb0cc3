//! PCK, flow smoothness and two-feature outcome tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{FlowField, MatchSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointPair {
    /// `[x, y]` in source pixels.
    pub src: [f64; 2],
    /// `[x, y]` in target pixels.
    pub tgt: [f64; 2],
}

/// Ground truth for one image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub pair_id: String,
    #[serde(default)]
    pub category: String,
    pub src_image_w: usize,
    pub src_image_h: usize,
    pub tgt_image_w: usize,
    pub tgt_image_h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_bbox_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_bbox_h: Option<f64>,
    pub keypoints: Vec<KeypointPair>,
}

fn inside(p: [f64; 2], w: usize, h: usize) -> bool {
    p.iter().all(|v| v.is_finite()) && p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64
}

impl PairAnnotation {
    pub fn validate(&self) -> Result<()> {
        if [self.src_image_w, self.src_image_h, self.tgt_image_w, self.tgt_image_h].contains(&0) {
            return Err(Error::Validation(format!("{}: image dims must be >= 1", self.pair_id)));
        }
        for dim in [self.tgt_bbox_w, self.tgt_bbox_h].into_iter().flatten() {
            if dim.is_nan() || dim < 1.0 {
                return Err(Error::Validation(format!("{}: bbox dims must be >= 1", self.pair_id)));
            }
        }
        for (i, kp) in self.keypoints.iter().enumerate() {
            if !inside(kp.src, self.src_image_w, self.src_image_h) {
                return Err(Error::Validation(format!(
                    "{}: keypoint {i} source {:?} outside {}x{} image",
                    self.pair_id, kp.src, self.src_image_w, self.src_image_h
                )));
            }
            if !inside(kp.tgt, self.tgt_image_w, self.tgt_image_h) {
                return Err(Error::Validation(format!(
                    "{}: keypoint {i} target {:?} outside {}x{} image",
                    self.pair_id, kp.tgt, self.tgt_image_w, self.tgt_image_h
                )));
            }
        }
        Ok(())
    }

    pub fn src_keypoints(&self) -> Vec<[f64; 2]> {
        self.keypoints.iter().map(|k| k.src).collect()
    }

    fn has_bbox(&self) -> bool {
        self.tgt_bbox_w.is_some() && self.tgt_bbox_h.is_some()
    }
}

/// What `(h, w)` means in the `kappa * max(h, w)` threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Target bounding box (SPair-71k).
    Bbox,
    /// Target image (PF-Pascal, TSS).
    Image,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbox" => Ok(ThresholdMode::Bbox),
            "image" => Ok(ThresholdMode::Image),
            other => Err(Error::invalid(format!("unknown threshold mode {other:?}"))),
        }
    }
}

pub fn pck_threshold(ann: &PairAnnotation, kappa: f64, mode: ThresholdMode) -> Result<f64> {
    if kappa.is_nan() || kappa <= 0.0 || kappa.is_infinite() {
        return Err(Error::invalid(format!("kappa must be > 0, got {kappa}")));
    }
    let extent = match mode {
        ThresholdMode::Image => ann.tgt_image_w.max(ann.tgt_image_h) as f64,
        ThresholdMode::Bbox => match (ann.tgt_bbox_w, ann.tgt_bbox_h) {
            (Some(w), Some(h)) => w.max(h),
            _ => {
                return Err(Error::invalid(format!(
                    "{}: bbox threshold requested but annotation has no target bbox",
                    ann.pair_id
                )))
            }
        },
    };
    Ok(kappa * extent)
}

/// Per-keypoint correctness: `|pred - gt| <= kappa * max(h, w)`. Entries that
/// carry an error count as incorrect.
pub fn correct_keypoints(
    matches: &MatchSet,
    ann: &PairAnnotation,
    kappa: f64,
    mode: ThresholdMode,
) -> Result<Vec<bool>> {
    if ann.keypoints.is_empty() {
        return Err(Error::Validation(format!("{}: no keypoints to score", ann.pair_id)));
    }
    if matches.entries.len() != ann.keypoints.len() {
        return Err(Error::shape(format!(
            "{}: {} matches for {} keypoints",
            ann.pair_id,
            matches.entries.len(),
            ann.keypoints.len()
        )));
    }
    let threshold = pck_threshold(ann, kappa, mode)?;
    Ok(matches
        .entries
        .iter()
        .zip(&ann.keypoints)
        .map(|(m, kp)| {
            m.is_valid() && (m.tgt[0] - kp.tgt[0]).hypot(m.tgt[1] - kp.tgt[1]) <= threshold
        })
        .collect())
}

fn percentage(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of correctly transferred keypoints for one pair.
pub fn pck(matches: &MatchSet, ann: &PairAnnotation, kappa: f64, mode: ThresholdMode) -> Result<f64> {
    let correct = correct_keypoints(matches, ann, kappa, mode)?;
    Ok(percentage(correct.iter().filter(|&&c| c).count(), correct.len()))
}

/// Mean L1 first-order difference of the flow over horizontally and
/// vertically adjacent pairs where both cells are valid.
pub fn flow_smoothness(flow: &FlowField) -> Result<f64> {
    let (h, w) = (flow.height(), flow.width());
    let valid = flow.valid();
    let diff = |a: (usize, usize), b: (usize, usize)| {
        let (p, q) = (flow.at(a.0, a.1), flow.at(b.0, b.1));
        (p.0 as f64 - q.0 as f64).abs() + (p.1 as f64 - q.1 as f64).abs()
    };
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !valid.get(y, x) {
                continue;
            }
            if x + 1 < w && valid.get(y, x + 1) {
                sum += diff((y, x), (y, x + 1));
                pairs += 1;
            }
            if y + 1 < h && valid.get(y + 1, x) {
                sum += diff((y, x), (y + 1, x));
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::validation("flow has no valid neighboring cell pairs"));
    }
    Ok(sum / pairs as f64)
}

/// Joint outcome of two feature types over the same keypoints, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub both_fail: f64,
    pub a_fail_b_correct: f64,
    pub a_correct_b_fail: f64,
    pub both_correct: f64,
}

impl Outcomes {
    pub fn cells(&self) -> [f64; 4] {
        [
            self.both_fail,
            self.a_fail_b_correct,
            self.a_correct_b_fail,
            self.both_correct,
        ]
    }

    pub fn total(&self) -> f64 {
        self.cells().iter().sum()
    }
}

pub fn outcome_distribution(correct_a: &[bool], correct_b: &[bool]) -> Result<Outcomes> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::shape(format!(
            "outcome vectors differ in length: {} vs {}",
            correct_a.len(),
            correct_b.len()
        )));
    }
    if correct_a.is_empty() {
        return Err(Error::invalid("no outcomes to tabulate"));
    }
    let mut counts = [0usize; 4];
    for (&a, &b) in correct_a.iter().zip(correct_b) {
        counts[(a as usize) * 2 + b as usize] += 1;
    }
    let n = correct_a.len();
    Ok(Outcomes {
        both_fail: percentage(counts[0], n),
        a_fail_b_correct: percentage(counts[1], n),
        a_correct_b_fail: percentage(counts[2], n),
        both_correct: percentage(counts[3], n),
    })
}

/// Map key for a threshold value: two decimals when exact, otherwise the
/// shortest round-trip representation.
pub fn kappa_key(kappa: f64) -> String {
    let two = format!("{kappa:.2}");
    if two.parse::<f64>().ok() == Some(kappa) {
        two
    } else {
        kappa.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_kappa_pck: BTreeMap<String, f64>,
    pub per_category_pck: BTreeMap<String, BTreeMap<String, f64>>,
    pub n_keypoints: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Outcomes>,
}

/// Pools keypoints over all pairs; each PCK is the percentage of correct
/// keypoints overall (and within each category).
pub fn evaluate_pck(
    pairs: &[(&MatchSet, &PairAnnotation)],
    kappas: &[f64],
    mode: ThresholdMode,
) -> Result<EvalReport> {
    if kappas.is_empty() {
        return Err(Error::invalid("no kappa values given"));
    }
    let mut report = EvalReport::default();
    let mut category_totals: BTreeMap<&str, usize> = BTreeMap::new();
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    let mut category_hits: BTreeMap<(&str, String), usize> = BTreeMap::new();
    for (matches, ann) in pairs {
        report.n_keypoints += ann.keypoints.len();
        *category_totals.entry(ann.category.as_str()).or_default() += ann.keypoints.len();
        for &kappa in kappas {
            let key = kappa_key(kappa);
            let n = correct_keypoints(matches, ann, kappa, mode)?
                .iter()
                .filter(|&&c| c)
                .count();
            *hits.entry(key.clone()).or_default() += n;
            *category_hits.entry((ann.category.as_str(), key)).or_default() += n;
        }
    }
    if report.n_keypoints == 0 {
        return Err(Error::validation("no keypoints to score"));
    }
    for (key, n) in hits {
        report.per_kappa_pck.insert(key, percentage(n, report.n_keypoints));
    }
    for ((cat, key), n) in category_hits {
        report
            .per_category_pck
            .entry(cat.to_string())
            .or_default()
            .insert(key, percentage(n, category_totals[cat]));
    }
    Ok(report)
}

/// Keeps only annotations usable in `mode`.
pub fn supports_mode(ann: &PairAnnotation, mode: ThresholdMode) -> bool {
    mode == ThresholdMode::Image || ann.has_bbox()
}
