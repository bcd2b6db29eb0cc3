//! Zero-shot semantic correspondence from fused feature maps.
//!
//! The crate works on dense feature grids (`FeatureMap`) dumped by an external
//! extractor: several diffusion U-Net decoder layers and one self-supervised
//! ViT layer per image. A pair of images is processed as follows:
//!
//! 1. each decoder layer is reduced with a PCA fit jointly on source and target
//!    tokens, resized to a common grid and concatenated ([`fusion::ensemble_sd`]);
//! 2. the ensembled map and the ViT map are independently L2-normalized,
//!    weighted by `alpha` / `1 - alpha` and concatenated ([`fusion::fuse`]);
//! 3. correspondences come from exhaustive cosine nearest-neighbor search on the
//!    fused grids ([`matching`]);
//! 4. results are scored with PCK, flow smoothness and outcome tables
//!    ([`metrics`]).
//!
//! [`parts`], [`swap`] and [`viz`] cover part co-segmentation, pixel-level
//! instance swapping and PNG rendering.

pub mod error;
pub mod featmap;
pub mod fusion;
pub mod matching;
pub mod metrics;
pub mod parts;
pub mod pca;
pub mod swap;
pub mod viz;

pub use error::{Error, Result};
pub use featmap::{FeatureMap, MapMeta, Mask};
pub use fusion::FusionConfig;
pub use matching::{Correspondence, FlowField, MatchSet};
pub use metrics::{EvalReport, PairAnnotation, ThresholdMode};
pub use pca::{PcaMethod, PcaModel};
