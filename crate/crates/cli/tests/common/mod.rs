//! Shared fixtures: a synthetic pair whose target is a known cyclic
//! permutation of the source tokens, written out as FMAPs, PNGs, an
//! annotation and a manifest.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use corrfuse::featmap::write_fmap;
use corrfuse::{FeatureMap, MapMeta};
use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

pub const BIN: &str = env!("CARGO_BIN_EXE_corrfuse");

pub fn corrfuse(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("CORRFUSE_LOG", "warn").output().expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Target cell `perm[i]` carries source token `i`: rows shift down by one.
pub fn row_shift_perm(grid: usize) -> Vec<usize> {
    (0..grid * grid).map(|i| ((i / grid + 1) % grid) * grid + i % grid).collect()
}

pub fn permute(map: &FeatureMap, perm: &[usize]) -> FeatureMap {
    let c = map.channels();
    let mut data = vec![0.0f32; map.data().len()];
    for (i, &p) in perm.iter().enumerate() {
        data[p * c..(p + 1) * c].copy_from_slice(map.token(i));
    }
    FeatureMap::new(map.height(), map.width(), c, data, map.meta().clone()).unwrap()
}

/// Gaussian tokens, or tokens confined to a `rank`-dim subspace.
pub fn random_map(grid: usize, c: usize, rank: Option<usize>, meta: MapMeta, rng: &mut ChaCha8Rng) -> FeatureMap {
    let n = grid * grid;
    let data: Vec<f32> = match rank {
        None => (0..n * c).map(|_| StandardNormal.sample(rng)).map(|v: f64| v as f32).collect(),
        Some(r) => {
            let latent: Vec<f64> = (0..n * r).map(|_| StandardNormal.sample(rng)).collect();
            let mix: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
            (0..n)
                .flat_map(|i| {
                    let (latent, mix) = (&latent, &mix);
                    (0..c).map(move |ch| (0..r).map(|j| latent[i * r + j] * mix[j * c + ch]).sum::<f64>() as f32)
                })
                .collect()
        }
    };
    FeatureMap::new(grid, grid, c, data, meta).unwrap()
}

pub struct PairFixture {
    pub dir: PathBuf,
    pub grid: usize,
    pub image: usize,
    pub perm: Vec<usize>,
    pub manifest: PathBuf,
    pub annotation: PathBuf,
    pub src_img: PathBuf,
    pub tgt_img: PathBuf,
    pub src_mask: PathBuf,
    pub tgt_mask: PathBuf,
    pub dino_channels: usize,
}

pub const SD_CHANNELS: [usize; 3] = [40, 30, 20];

impl PairFixture {
    /// `grid x grid` maps for three SD layers and DINO, images of
    /// `8 * grid` pixels, keypoints at every third cell center.
    pub fn new(dir: &Path, grid: usize, rank: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = grid * 8;
        let perm = row_shift_perm(grid);
        let meta = |tag: &str| MapMeta::new(image as u32, image as u32).with_tag(tag);
        let mut sd = BTreeMap::new();
        for (layer, &c) in ["2", "5", "8"].iter().zip(&SD_CHANNELS) {
            let src = random_map(grid, c, rank, meta(&format!("sd.{layer}")), &mut rng);
            let tgt = permute(&src, &perm);
            for (side, map) in [("src", src), ("tgt", tgt)] {
                let p = dir.join(format!("{side}.sd.{layer}.fmap"));
                write_fmap(&map, &p).unwrap();
                sd.entry(side).or_insert_with(Vec::new).push(p.file_name().unwrap().to_str().unwrap().to_string());
            }
        }
        let dino_channels = 24;
        let src_dino = random_map(grid, dino_channels, rank, meta("dino.11"), &mut rng);
        write_fmap(&permute(&src_dino, &perm), dir.join("tgt.dino.11.fmap")).unwrap();
        write_fmap(&src_dino, dir.join("src.dino.11.fmap")).unwrap();

        let src_img = dir.join("src.png");
        let tgt_img = dir.join("tgt.png");
        RgbImage::from_fn(image as u32, image as u32, |x, y| Rgb([x as u8, y as u8, 7]))
            .save(&src_img)
            .unwrap();
        RgbImage::from_fn(image as u32, image as u32, |x, y| Rgb([200, (x * 2) as u8, (y * 3) as u8]))
            .save(&tgt_img)
            .unwrap();
        let c = image as f64 / 2.0;
        let blob = GrayImage::from_fn(image as u32, image as u32, |x, y| {
            let d = (x as f64 + 0.5 - c).hypot(y as f64 + 0.5 - c);
            Luma([if d < c * 0.7 { 255 } else { 0 }])
        });
        let (src_mask, tgt_mask) = (dir.join("src_mask.png"), dir.join("tgt_mask.png"));
        blob.save(&src_mask).unwrap();
        blob.save(&tgt_mask).unwrap();

        let center = |cell: usize| [(cell % grid) as f64 * 8.0 + 3.5, (cell / grid) as f64 * 8.0 + 3.5];
        let keypoints: Vec<_> = (0..grid * grid)
            .step_by(3)
            .map(|i| json!({ "src": center(i), "tgt": center(perm[i]) }))
            .collect();
        let annotation = dir.join("annotation.json");
        let ann = json!({
            "pair_id": "pair0",
            "category": "synthetic",
            "src_image_w": image, "src_image_h": image,
            "tgt_image_w": image, "tgt_image_h": image,
            "tgt_bbox_w": image as f64 * 0.8, "tgt_bbox_h": image as f64 * 0.6,
            "keypoints": keypoints,
        });
        fs::write(&annotation, ann.to_string()).unwrap();

        let manifest = dir.join("manifest.json");
        let entry = |side: &str| {
            json!({
                "image": format!("{side}.png"),
                "sd": sd[side],
                "dino": format!("{side}.dino.11.fmap"),
                "mask": format!("{side}_mask.png"),
            })
        };
        let m = json!({
            "schema_version": 1,
            "pairs": [{ "pair_id": "pair0", "src": entry("src"), "tgt": entry("tgt"), "annotation": "annotation.json" }],
        });
        fs::write(&manifest, m.to_string()).unwrap();
        PairFixture {
            dir: dir.to_path_buf(),
            grid,
            image,
            perm,
            manifest,
            annotation,
            src_img,
            tgt_img,
            src_mask,
            tgt_mask,
            dino_channels,
        }
    }

    pub fn fused(&self, out: &Path, side: &str) -> PathBuf {
        out.join(format!("pair0.{side}.fused.fmap"))
    }

    /// Runs `fuse` on the grid itself; returns the output directory.
    pub fn fuse(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.dir.join(name);
        let target = format!("{0}x{0}", self.grid);
        let mut args = vec!["fuse", "--manifest", s(&self.manifest), "--out", s(&out), "--pca-dim", "32", "--target", &target];
        args.extend_from_slice(extra);
        let o = corrfuse(&args);
        assert!(o.status.success(), "fuse failed: {}", String::from_utf8_lossy(&o.stderr));
        out
    }
}

/// Every regular file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
