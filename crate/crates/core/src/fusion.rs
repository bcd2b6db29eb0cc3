//! Decoder-layer ensembling and SD/DINO feature fusion.

use log::debug;

use crate::error::{Error, Result};
use crate::featmap::{bilinear_resize, normalize_in_place, FeatureMap};
use crate::pca::{fit_pair_pca, PcaMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Weight of the SD block; the DINO block gets `1 - alpha`.
    pub alpha: f32,
    /// Channel count of the ensembled SD descriptor.
    pub pca_dim: usize,
    pub target_h: usize,
    pub target_w: usize,
    pub sd_layers: Vec<String>,
    pub method: PcaMethod,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            pca_dim: 256,
            target_h: 60,
            target_w: 60,
            sd_layers: vec!["2".into(), "5".into(), "8".into()],
            method: PcaMethod::randomized(0),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.pca_dim == 0 {
            return Err(Error::invalid("pca_dim must be >= 1"));
        }
        if self.target_h == 0 || self.target_w == 0 {
            return Err(Error::invalid("target dims must be >= 1"));
        }
        Ok(())
    }
}

/// Splits `total` channels across layers in proportion to `channels`.
///
/// Each share is rounded to nearest (at least 1) and whatever is left over
/// after rounding goes to the first layer. The shares always sum to `total`.
pub fn layer_budgets(channels: &[usize], total: usize) -> Result<Vec<usize>> {
    if channels.is_empty() {
        return Err(Error::invalid("no layers to split a budget over"));
    }
    if total < channels.len() {
        return Err(Error::invalid(format!(
            "pca_dim {total} smaller than the number of layers {}",
            channels.len()
        )));
    }
    let sum: usize = channels.iter().sum();
    let mut budgets: Vec<usize> = channels
        .iter()
        .map(|&c| ((total as f64 * c as f64 / sum as f64).round() as usize).max(1))
        .collect();
    let assigned: usize = budgets.iter().sum();
    if assigned <= total {
        budgets[0] += total - assigned;
    } else {
        // over-assigned after the max(1) floor: take back from the largest shares
        let mut excess = assigned - total;
        while excess > 0 {
            let (i, _) = budgets
                .iter()
                .enumerate()
                .filter(|(_, &b)| b > 1)
                .max_by_key(|&(i, &b)| (b, std::cmp::Reverse(i)))
                .expect("total >= layer count guarantees a share above 1");
            budgets[i] -= 1;
            excess -= 1;
        }
    }
    Ok(budgets)
}

/// Builds the ensembled SD descriptor for a pair: per layer a joint-pair PCA to
/// its channel budget, bilinear resize to the target grid, then channel
/// concatenation in layer order.
pub fn ensemble_sd(
    src_layers: &[FeatureMap],
    tgt_layers: &[FeatureMap],
    cfg: &FusionConfig,
) -> Result<(FeatureMap, FeatureMap)> {
    cfg.validate()?;
    if src_layers.is_empty() || src_layers.len() != tgt_layers.len() {
        return Err(Error::shape(format!(
            "need matching non-empty layer lists, got {} source and {} target",
            src_layers.len(),
            tgt_layers.len()
        )));
    }
    for (i, (s, t)) in src_layers.iter().zip(tgt_layers).enumerate() {
        if s.channels() != t.channels() {
            return Err(Error::shape(format!(
                "layer {i}: source has {} channels, target {}",
                s.channels(),
                t.channels()
            )));
        }
    }
    let channels: Vec<usize> = src_layers.iter().map(|m| m.channels()).collect();
    let budgets = layer_budgets(&channels, cfg.pca_dim)?;
    debug!("per-layer PCA budgets {budgets:?} for channels {channels:?}");

    let mut src_parts = Vec::with_capacity(budgets.len());
    let mut tgt_parts = Vec::with_capacity(budgets.len());
    for (i, ((s, t), &k)) in src_layers.iter().zip(tgt_layers).zip(&budgets).enumerate() {
        let (rs, rt, _) = fit_pair_pca(s, t, k, cfg.method.reseeded(i as u64))?;
        src_parts.push(bilinear_resize(&rs, cfg.target_h, cfg.target_w)?);
        tgt_parts.push(bilinear_resize(&rt, cfg.target_h, cfg.target_w)?);
    }
    let mut src = FeatureMap::concat_channels(&src_parts)?;
    let mut tgt = FeatureMap::concat_channels(&tgt_parts)?;
    for (map, layers) in [(&mut src, src_layers), (&mut tgt, tgt_layers)] {
        let meta = map.meta_mut();
        meta.model_tag = "sd.ensemble".into();
        meta.extraction_params.insert("pca".into(), "centered".into());
        meta.extraction_params.insert("pca_dim".into(), cfg.pca_dim.to_string());
        meta.extraction_params.insert(
            "pca_budgets".into(),
            budgets.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","),
        );
        let tags: Vec<&str> = layers.iter().map(|m| m.meta().model_tag.as_str()).collect();
        meta.extraction_params.insert("sd_layers".into(), tags.join(","));
    }
    Ok((src, tgt))
}

/// Concatenates `alpha * sd / |sd|` and `(1 - alpha) * dino / |dino|` per
/// token. Zero tokens stay zero in their block.
pub fn fuse(sd: &FeatureMap, dino: &FeatureMap, alpha: f32) -> Result<FeatureMap> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if (sd.height(), sd.width()) != (dino.height(), dino.width()) {
        return Err(Error::shape(format!(
            "SD grid {}x{} differs from DINO grid {}x{}",
            sd.height(),
            sd.width(),
            dino.height(),
            dino.width()
        )));
    }
    let (cs, cd) = (sd.channels(), dino.channels());
    let beta = 1.0 - alpha;
    let mut data = Vec::with_capacity(sd.num_tokens() * (cs + cd));
    let mut block = Vec::with_capacity(cs.max(cd));
    for i in 0..sd.num_tokens() {
        for (tok, weight) in [(sd.token(i), alpha), (dino.token(i), beta)] {
            block.clear();
            block.extend_from_slice(tok);
            normalize_in_place(&mut block);
            data.extend(block.iter().map(|&v| v * weight));
        }
    }
    let mut meta = sd.meta().clone();
    meta.model_tag = "fused".into();
    meta.extraction_params.insert("alpha".into(), alpha.to_string());
    meta.extraction_params.insert("sd_channels".into(), cs.to_string());
    meta.extraction_params.insert("dino_channels".into(), cd.to_string());
    if !dino.meta().model_tag.is_empty() {
        meta.extraction_params
            .insert("dino_tag".into(), dino.meta().model_tag.clone());
    }
    FeatureMap::new(sd.height(), sd.width(), cs + cd, data, meta)
}

/// Full pair pipeline: ensemble SD layers, align DINO maps to the target grid,
/// fuse per image.
pub fn fuse_pair(
    src_sd_layers: &[FeatureMap],
    tgt_sd_layers: &[FeatureMap],
    src_dino: &FeatureMap,
    tgt_dino: &FeatureMap,
    cfg: &FusionConfig,
) -> Result<(FeatureMap, FeatureMap)> {
    let (src_sd, tgt_sd) = ensemble_sd(src_sd_layers, tgt_sd_layers, cfg)?;
    let src_dino = bilinear_resize(src_dino, cfg.target_h, cfg.target_w)?;
    let tgt_dino = bilinear_resize(tgt_dino, cfg.target_h, cfg.target_w)?;
    Ok((
        fuse(&src_sd, &src_dino, cfg.alpha)?,
        fuse(&tgt_sd, &tgt_dino, cfg.alpha)?,
    ))
}
