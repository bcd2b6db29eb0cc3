//! Subcommand bodies. Each writes its files, then prints at most one JSON
//! document on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use corrfuse::featmap::write_fmap;
use corrfuse::fusion::fuse_pair;
use corrfuse::matching::{dense_flow, read_flow, transfer_keypoints, write_flow, ImageSizes};
use corrfuse::metrics::{correct_keypoints, evaluate_pck, flow_smoothness, outcome_distribution};
use corrfuse::parts::{kmeans, match_clusters};
use corrfuse::swap::{swap_instance, SwapStatus};
use corrfuse::viz::{cluster_palette, pca_rgb, render_flow, upscale_nearest, RenderKind, RenderSpec};
use corrfuse::{EvalReport, FeatureMap, FusionConfig, Mask, MatchSet, PairAnnotation, PcaMethod, ThresholdMode};
use log::info;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::*;
use crate::error::{CliError, CliResult, WithPath};
use crate::ingest::{ingest_annotations, read_annotations};
use crate::io::*;
use crate::manifest::{load_manifest, require, PairManifest};

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    print!("{}", to_json(value)?);
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).at(dir)
}

fn method_label(m: PcaMethod) -> String {
    match m {
        PcaMethod::Exact => "exact".into(),
        PcaMethod::Randomized { oversample, power_iters, seed } => {
            format!("randomized(oversample={oversample},power_iters={power_iters},seed={seed})")
        }
    }
}

pub fn fuse(args: &FuseArgs, seed: u64) -> CliResult<()> {
    let method = match args.method {
        MethodArg::Exact => PcaMethod::Exact,
        MethodArg::Randomized => PcaMethod::Randomized {
            oversample: args.oversample,
            power_iters: args.power_iters,
            seed,
        },
    };
    let cfg = FusionConfig {
        alpha: args.alpha,
        pca_dim: args.pca_dim,
        target_h: args.target.0,
        target_w: args.target.1,
        method,
        ..FusionConfig::default()
    };
    cfg.validate()?;
    let pairs = load_manifest(&args.manifest)?;
    create_dir(&args.out)?;
    let outputs = pairs
        .par_iter()
        .map(|pair| fuse_one(pair, &cfg, &args.out))
        .collect::<CliResult<Vec<Value>>>()?;
    print_json(&json!({ "pairs": outputs }))
}

fn fuse_one(pair: &PairManifest, cfg: &FusionConfig, out: &Path) -> CliResult<Value> {
    if pair.src.sd.is_empty() || pair.tgt.sd.is_empty() {
        return Err(CliError::data(format!("pair {}: src.sd and tgt.sd must list layer maps", pair.pair_id)));
    }
    let load_all = |paths: &[PathBuf]| paths.iter().map(|p| load_fmap(p)).collect::<CliResult<Vec<_>>>();
    let (src_sd, tgt_sd) = (load_all(&pair.src.sd)?, load_all(&pair.tgt.sd)?);
    let src_dino = load_fmap(require(pair.src.dino.as_ref(), pair, "src.dino")?)?;
    let tgt_dino = load_fmap(require(pair.tgt.dino.as_ref(), pair, "tgt.dino")?)?;
    info!("fusing pair {}", pair.pair_id);
    let (mut src, mut tgt) = fuse_pair(&src_sd, &tgt_sd, &src_dino, &tgt_dino, cfg)
        .map_err(|e| CliError::from(e).at(Path::new(&format!("pair {}", pair.pair_id))))?;
    let mut written = Vec::new();
    for (side, map) in [("src", &mut src), ("tgt", &mut tgt)] {
        let params = &mut map.meta_mut().extraction_params;
        params.insert("pair_id".into(), pair.pair_id.clone());
        params.insert("pca_method".into(), method_label(cfg.method));
        let path = out.join(format!("{}.{side}.fused.fmap", pair.pair_id));
        write_fmap(map, &path).at(&path)?;
        written.push(path.display().to_string());
    }
    Ok(json!({
        "pair_id": pair.pair_id,
        "src": written[0],
        "tgt": written[1],
        "height": src.height(),
        "width": src.width(),
        "channels": src.channels(),
    }))
}

fn pick_annotation(path: &Path, pair_id: Option<&str>) -> CliResult<PairAnnotation> {
    let mut anns = read_annotations(path)?;
    match pair_id {
        Some(id) => anns
            .into_iter()
            .find(|a| a.pair_id == id)
            .ok_or_else(|| CliError::data(format!("no annotation with pair_id {id:?}")).at(path)),
        None if anns.len() == 1 => Ok(anns.remove(0)),
        None => Err(CliError::usage(format!(
            "{} holds {} annotations; pick one with --pair-id",
            path.display(),
            anns.len()
        ))),
    }
}

fn sparse(src: &FeatureMap, tgt: &FeatureMap, ann: &PairAnnotation, tgt_mask: Option<&Mask>) -> CliResult<MatchSet> {
    let sizes = ImageSizes {
        src_w: ann.src_image_w,
        src_h: ann.src_image_h,
        tgt_w: ann.tgt_image_w,
        tgt_h: ann.tgt_image_h,
    };
    let mut set = transfer_keypoints(src, tgt, &ann.src_keypoints(), sizes, tgt_mask)?;
    set.pair_id = ann.pair_id.clone();
    Ok(set)
}

pub fn match_cmd(args: &MatchArgs) -> CliResult<()> {
    if let (Some(manifest), Some(features)) = (&args.manifest, &args.features) {
        return match_manifest(args, manifest, features);
    }
    let (Some(src), Some(tgt)) = (&args.src, &args.tgt) else {
        return Err(CliError::usage("give --src and --tgt, or --manifest and --features"));
    };
    let src = load_fmap(src)?;
    let tgt = load_fmap(tgt)?;
    let src_mask = load_optional_mask(args.src_mask.as_deref())?;
    let tgt_mask = load_optional_mask(args.tgt_mask.as_deref())?;
    if args.dense {
        let out = args.out.as_deref().ok_or_else(|| CliError::usage("--dense needs --out"))?;
        let dims = args.out_dims.unwrap_or((src.height(), src.width()));
        let flow = dense_flow(&src, &tgt, src_mask.as_ref(), tgt_mask.as_ref(), dims)?;
        return write_flow(&flow, out).at(out);
    }
    let ann_path = args
        .annotation
        .as_deref()
        .ok_or_else(|| CliError::usage("sparse matching needs --annotation (or use --dense)"))?;
    let ann = pick_annotation(ann_path, args.pair_id.as_deref())?;
    let set = sparse(&src, &tgt, &ann, tgt_mask.as_ref())?;
    match &args.out {
        Some(out) => write_json(out, &set),
        None => print_json(&set),
    }
}

/// One output file per manifest pair, processed in parallel.
fn match_manifest(args: &MatchArgs, manifest: &Path, features: &Path) -> CliResult<()> {
    let out = args.out.as_deref().ok_or_else(|| CliError::usage("--manifest needs --out <dir>"))?;
    let pairs = load_manifest(manifest)?;
    create_dir(out)?;
    let written = pairs
        .par_iter()
        .map(|pair| -> CliResult<String> {
            let fused = |side: &str| load_fmap(&features.join(format!("{}.{side}.fused.fmap", pair.pair_id)));
            let (src, tgt) = (fused("src")?, fused("tgt")?);
            let src_mask = load_optional_mask(pair.src.mask.as_deref())?;
            let tgt_mask = load_optional_mask(pair.tgt.mask.as_deref())?;
            let path = if args.dense {
                let dims = args.out_dims.unwrap_or((src.height(), src.width()));
                let flow = dense_flow(&src, &tgt, src_mask.as_ref(), tgt_mask.as_ref(), dims)?;
                let path = out.join(format!("{}.flow.sflw", pair.pair_id));
                write_flow(&flow, &path).at(&path)?;
                path
            } else {
                let ann = pair
                    .annotation()?
                    .ok_or_else(|| CliError::data(format!("pair {}: no annotation for sparse matching", pair.pair_id)))?;
                let path = out.join(format!("{}.matches.json", pair.pair_id));
                write_json(&path, &sparse(&src, &tgt, &ann, tgt_mask.as_ref())?)?;
                path
            };
            Ok(path.display().to_string())
        })
        .collect::<CliResult<Vec<_>>>()?;
    print_json(&json!({ "outputs": written }))
}

fn load_match_sets(paths: &[PathBuf]) -> CliResult<Vec<MatchSet>> {
    paths.iter().map(|p| MatchSet::read_json(p).at(p)).collect()
}

fn load_all_annotations(paths: &[PathBuf]) -> CliResult<Vec<PairAnnotation>> {
    let mut anns = Vec::new();
    for p in paths {
        anns.extend(read_annotations(p)?);
    }
    anns.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if let Some(w) = anns.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
        return Err(CliError::data(format!("duplicate annotation for pair_id {:?}", w[0].pair_id)));
    }
    Ok(anns)
}

/// Pairs each annotation with its match set (by pair_id; a lone unnamed set
/// goes with a lone annotation).
fn join<'a>(anns: &'a [PairAnnotation], sets: &'a [MatchSet], which: &str) -> CliResult<Vec<(&'a MatchSet, &'a PairAnnotation)>> {
    if anns.len() == 1 && sets.len() == 1 && sets[0].pair_id.is_empty() {
        return Ok(vec![(&sets[0], &anns[0])]);
    }
    let mut by_id: BTreeMap<&str, &MatchSet> = BTreeMap::new();
    for s in sets {
        if by_id.insert(&s.pair_id, s).is_some() {
            return Err(CliError::data(format!("{which}: duplicate match set for pair_id {:?}", s.pair_id)));
        }
    }
    let joined = anns
        .iter()
        .map(|a| {
            by_id
                .remove(a.pair_id.as_str())
                .map(|s| (s, a))
                .ok_or_else(|| CliError::data(format!("{which}: no match set for pair_id {:?}", a.pair_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().next() {
        return Err(CliError::data(format!("{which}: match set {extra:?} has no annotation")));
    }
    Ok(joined)
}

fn mode(m: ModeArg) -> ThresholdMode {
    match m {
        ModeArg::Bbox => ThresholdMode::Bbox,
        ModeArg::Image => ThresholdMode::Image,
    }
}

pub fn eval(cmd: &EvalCmd) -> CliResult<()> {
    match cmd {
        EvalCmd::Pck(a) => {
            let sets = load_match_sets(&a.matches)?;
            let anns = load_all_annotations(&a.annotations)?;
            let report = evaluate_pck(&join(&anns, &sets, "--matches")?, &a.kappa, mode(a.mode))?;
            if let Some(csv_path) = &a.csv {
                write_category_csv(csv_path, &report)?;
            }
            print_json(&report)
        }
        EvalCmd::Smoothness(a) => {
            let flow = read_flow(&a.flow).at(&a.flow)?;
            let report = EvalReport {
                smoothness: Some(flow_smoothness(&flow)?),
                ..EvalReport::default()
            };
            print_json(&report)
        }
        EvalCmd::Outcomes(a) => {
            let (flags_a, flags_b) = match (&a.flags_a, &a.flags_b) {
                (Some(fa), Some(fb)) => (fa.0.clone(), fb.0.clone()),
                (None, None) => {
                    let anns = load_all_annotations(&a.annotations)?;
                    if anns.is_empty() {
                        return Err(CliError::usage("outcomes need --annotations with --a/--b, or --flags-a/--flags-b"));
                    }
                    let (sa, sb) = (load_match_sets(&a.a)?, load_match_sets(&a.b)?);
                    let mut fa = Vec::new();
                    let mut fb = Vec::new();
                    for ((ma, ann), (mb, _)) in join(&anns, &sa, "--a")?.into_iter().zip(join(&anns, &sb, "--b")?) {
                        fa.extend(correct_keypoints(ma, ann, a.kappa, mode(a.mode))?);
                        fb.extend(correct_keypoints(mb, ann, a.kappa, mode(a.mode))?);
                    }
                    (fa, fb)
                }
                _ => return Err(CliError::usage("--flags-a and --flags-b go together")),
            };
            let report = EvalReport {
                n_keypoints: flags_a.len(),
                outcomes: Some(outcome_distribution(&flags_a, &flags_b)?),
                ..EvalReport::default()
            };
            print_json(&report)
        }
    }
}

fn write_category_csv(path: &Path, report: &EvalReport) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::runtime(e.to_string()).at(path);
    w.write_record(["category", "kappa", "pck"]).map_err(err)?;
    for (cat, per_kappa) in &report.per_category_pck {
        for (kappa, v) in per_kappa {
            w.write_record([cat.as_str(), kappa.as_str(), &format!("{v:.4}")]).map_err(err)?;
        }
    }
    for (kappa, v) in &report.per_kappa_pck {
        w.write_record(["all", kappa.as_str(), &format!("{v:.4}")]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::runtime(e.to_string()).at(path))?;
    write_bytes(path, &bytes)
}

pub fn cluster(args: &ClusterArgs, seed: u64) -> CliResult<()> {
    let src = load_fmap(&args.fmap)?;
    create_dir(&args.out_dir)?;
    let src_c = kmeans(&src, args.k, seed, args.max_iters)?;
    let palette = cluster_palette(args.k);
    let src_png = args.out_dir.join("src.labels.png");
    write_indexed_png(&src_png, &src_c.labels, src.height(), src.width(), &palette)?;
    let describe = |path: &Path, map: &corrfuse::FeatureMap, c: &corrfuse::parts::Clustering, png: &Path| {
        json!({
            "fmap": path.display().to_string(),
            "model_tag": map.meta().model_tag,
            "height": map.height(),
            "width": map.width(),
            "channels": map.channels(),
            "labels_png": png.display().to_string(),
            "inertia": c.inertia,
            "iterations": c.iterations,
        })
    };
    let mut report = json!({
        "k": args.k,
        "seed": seed,
        "max_iters": args.max_iters,
        "src": describe(&args.fmap, &src, &src_c, &src_png),
    });
    if let Some(tgt_path) = &args.tgt_fmap {
        let tgt = load_fmap(tgt_path)?;
        let tgt_c = kmeans(&tgt, args.k, seed, args.max_iters)?;
        let m = match_clusters(&src_c, &tgt_c)?;
        // matched clusters share a palette color
        let mut tgt_palette = palette.clone();
        for (i, &j) in m.assignment.iter().enumerate() {
            tgt_palette[j] = palette[i];
        }
        let tgt_png = args.out_dir.join("tgt.labels.png");
        write_indexed_png(&tgt_png, &tgt_c.labels, tgt.height(), tgt.width(), &tgt_palette)?;
        report["tgt"] = describe(tgt_path, &tgt, &tgt_c, &tgt_png);
        report["assignment"] = json!(m.assignment);
        report["cost"] = json!(m.cost);
    }
    let json_path = args.out_dir.join("clusters.json");
    write_json(&json_path, &report)?;
    print_json(&report)
}

pub fn swap(args: &SwapArgs) -> CliResult<()> {
    let src_img = load_rgb(&args.src_img)?;
    let tgt_img = load_rgb(&args.tgt_img)?;
    let src_feat = load_fmap(&args.src_fmap)?;
    let tgt_feat = load_fmap(&args.tgt_fmap)?;
    let src_mask = load_mask(&args.src_mask)?;
    let tgt_mask = load_mask(&args.tgt_mask)?;
    let res = swap_instance(&src_img, &tgt_img, &src_feat, &tgt_feat, &src_mask, &tgt_mask)?;
    write_png(&args.out, &res.image)?;
    let status = match res.status {
        SwapStatus::Swapped => "swapped",
        SwapStatus::EmptySourceMask => "empty_source_mask",
    };
    print_json(&json!({ "status": status, "swapped_pixels": res.swapped_pixels }))
}

fn sized(img: corrfuse::swap::Image, kind: RenderKind, dims: Option<(usize, usize)>) -> CliResult<corrfuse::swap::Image> {
    Ok(match dims {
        Some((h, w)) => {
            let spec = RenderSpec::new(kind, w, h)?;
            upscale_nearest(&img, spec.out_h, spec.out_w)
        }
        None => img,
    })
}

pub fn viz(cmd: &VizCmd) -> CliResult<()> {
    match cmd {
        VizCmd::Pca(a) => {
            let src = load_fmap(&a.src)?;
            let tgt = load_fmap(&a.tgt)?;
            let src_mask = load_optional_mask(a.src_mask.as_deref())?;
            let tgt_mask = load_optional_mask(a.tgt_mask.as_deref())?;
            let (si, ti) = pca_rgb(&src, &tgt, src_mask.as_ref(), tgt_mask.as_ref())?;
            write_png(&a.out_src, &sized(si, RenderKind::PcaRgb, a.out_dims)?)?;
            write_png(&a.out_tgt, &sized(ti, RenderKind::PcaRgb, a.out_dims)?)
        }
        VizCmd::Flow(a) => {
            let flow = read_flow(&a.flow).at(&a.flow)?;
            let bg = load_optional_mask(a.bg_mask.as_deref())?;
            let img = render_flow(&flow, bg.as_ref())?;
            write_png(&a.out, &sized(img, RenderKind::Flow, a.out_dims)?)
        }
    }
}

pub fn ingest(args: &IngestArgs) -> CliResult<()> {
    let (anns, summary) = ingest_annotations(&args.input, args.format)?;
    write_json(&args.out, &anns)?;
    print_json(&summary)
}
