//! Annotation ingestion into normalized [`PairAnnotation`] records.
//!
//! Keypoints flagged missing or occluded are dropped and counted; everything
//! else that does not fit the schema is an error naming the file and field.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use corrfuse::metrics::KeypointPair;
use corrfuse::PairAnnotation;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult, WithPath};
use crate::io::read_json_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// SPair-71k pair files (`src_kps`, `trg_kps`, `trg_bndbox`, ...).
    SpairJson,
    /// This tool's own schema; see the README.
    SimpleJson,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spair_json" => Ok(Format::SpairJson),
            "simple_json" => Ok(Format::SimpleJson),
            _ => Err(format!("unknown format {s:?} (expected spair_json or simple_json)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub pairs: usize,
    pub keypoints: usize,
    pub dropped_missing: usize,
    pub dropped_occluded: usize,
}

type FieldResult<T> = std::result::Result<T, String>;

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> FieldResult<&'a Value> {
    obj.get(key).ok_or_else(|| format!("{path}{key}: missing"))
}

fn as_str(v: &Value, path: &str) -> FieldResult<String> {
    v.as_str().map(str::to_string).ok_or_else(|| format!("{path}: expected a string"))
}

fn as_dim(v: &Value, path: &str) -> FieldResult<usize> {
    match v.as_u64() {
        Some(n) if n > 0 => Ok(n as usize),
        _ => Err(format!("{path}: expected a positive integer, got {v}")),
    }
}

fn as_f64(v: &Value, path: &str) -> FieldResult<f64> {
    v.as_f64().ok_or_else(|| format!("{path}: expected a number, got {v}"))
}

/// `[x, y]`, or `None` when the point is marked missing (null or negative).
fn as_point(v: &Value, path: &str) -> FieldResult<Option<[f64; 2]>> {
    if v.is_null() {
        return Ok(None);
    }
    let arr = v.as_array().filter(|a| a.len() == 2).ok_or_else(|| format!("{path}: expected [x, y], got {v}"))?;
    let p = [as_f64(&arr[0], &format!("{path}[0]"))?, as_f64(&arr[1], &format!("{path}[1]"))?];
    Ok((p[0] >= 0.0 && p[1] >= 0.0).then_some(p))
}

fn check_inside(p: [f64; 2], w: usize, h: usize, path: &str) -> FieldResult<()> {
    if p[0] < w as f64 && p[1] < h as f64 {
        Ok(())
    } else {
        Err(format!("{path}: keypoint [{}, {}] outside the {w}x{h} image", p[0], p[1]))
    }
}

fn as_bool(obj: &Map<String, Value>, path: &str, key: &str) -> FieldResult<Option<bool>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(v) => Err(format!("{path}{key}: expected a boolean, got {v}")),
    }
}

fn sanitize_id(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn parse_simple(v: &Value, path: &str, summary: &mut IngestSummary) -> FieldResult<PairAnnotation> {
    let obj = v.as_object().ok_or_else(|| format!("{path}: expected an object"))?;
    let p = |k: &str| format!("{path}{k}");
    let dims = |k: &str| as_dim(field(obj, path, k)?, &p(k));
    let (sw, sh, tw, th) = (dims("src_image_w")?, dims("src_image_h")?, dims("tgt_image_w")?, dims("tgt_image_h")?);
    let bbox = |k: &str| obj.get(k).filter(|v| !v.is_null()).map(|v| as_f64(v, &p(k))).transpose();
    let (bw, bh) = (bbox("tgt_bbox_w")?, bbox("tgt_bbox_h")?);
    if bw.is_some() != bh.is_some() {
        return Err(format!("{path}tgt_bbox_w/tgt_bbox_h: give both or neither"));
    }
    let kps = field(obj, path, "keypoints")?
        .as_array()
        .ok_or_else(|| format!("{path}keypoints: expected an array"))?;
    let mut keypoints = Vec::with_capacity(kps.len());
    for (i, kp) in kps.iter().enumerate() {
        let kpath = format!("{path}keypoints[{i}]");
        let kobj = kp.as_object().ok_or_else(|| format!("{kpath}: expected an object"))?;
        let kpath = format!("{kpath}.");
        if as_bool(kobj, &kpath, "occluded")? == Some(true) || as_bool(kobj, &kpath, "visible")? == Some(false) {
            summary.dropped_occluded += 1;
            continue;
        }
        let src = as_point(kobj.get("src").unwrap_or(&Value::Null), &format!("{kpath}src"))?;
        let tgt = as_point(kobj.get("tgt").unwrap_or(&Value::Null), &format!("{kpath}tgt"))?;
        let (Some(src), Some(tgt)) = (src, tgt) else {
            summary.dropped_missing += 1;
            continue;
        };
        check_inside(src, sw, sh, &format!("{kpath}src"))?;
        check_inside(tgt, tw, th, &format!("{kpath}tgt"))?;
        keypoints.push(KeypointPair { src, tgt });
    }
    Ok(PairAnnotation {
        pair_id: sanitize_id(&as_str(field(obj, path, "pair_id")?, &p("pair_id"))?),
        category: obj.get("category").map(|v| as_str(v, &p("category"))).transpose()?.unwrap_or_default(),
        src_image_w: sw,
        src_image_h: sh,
        tgt_image_w: tw,
        tgt_image_h: th,
        tgt_bbox_w: bw,
        tgt_bbox_h: bh,
        keypoints,
    })
}

fn parse_spair(v: &Value, path: &str, stem: &str, summary: &mut IngestSummary) -> FieldResult<PairAnnotation> {
    let obj = v.as_object().ok_or_else(|| format!("{path}: expected an object"))?;
    let p = |k: &str| format!("{path}{k}");
    let imsize = |k: &str| -> FieldResult<(usize, usize)> {
        let arr = field(obj, path, k)?
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| format!("{path}{k}: expected [width, height, ...]"))?;
        Ok((as_dim(&arr[0], &format!("{path}{k}[0]"))?, as_dim(&arr[1], &format!("{path}{k}[1]"))?))
    };
    let (sw, sh) = imsize("src_imsize")?;
    let (tw, th) = imsize("trg_imsize")?;
    let bbox = match obj.get("trg_bndbox") {
        None | Some(Value::Null) => None,
        Some(b) => {
            let arr = b
                .as_array()
                .filter(|a| a.len() == 4)
                .ok_or_else(|| format!("{path}trg_bndbox: expected [x1, y1, x2, y2]"))?;
            let c: Vec<f64> = arr
                .iter()
                .enumerate()
                .map(|(i, v)| as_f64(v, &format!("{path}trg_bndbox[{i}]")))
                .collect::<FieldResult<_>>()?;
            if c[2] <= c[0] || c[3] <= c[1] {
                return Err(format!("{path}trg_bndbox: degenerate box {c:?}"));
            }
            Some((c[2] - c[0], c[3] - c[1]))
        }
    };
    let kps = |k: &str| -> FieldResult<&Vec<Value>> {
        field(obj, path, k)?.as_array().ok_or_else(|| format!("{path}{k}: expected an array"))
    };
    let (src_kps, tgt_kps) = (kps("src_kps")?, kps("trg_kps")?);
    if src_kps.len() != tgt_kps.len() {
        return Err(format!(
            "{path}trg_kps: {} keypoints but src_kps has {}",
            tgt_kps.len(),
            src_kps.len()
        ));
    }
    let mut keypoints = Vec::with_capacity(src_kps.len());
    for (i, (s, t)) in src_kps.iter().zip(tgt_kps).enumerate() {
        let (sp, tp) = (format!("{path}src_kps[{i}]"), format!("{path}trg_kps[{i}]"));
        let (Some(src), Some(tgt)) = (as_point(s, &sp)?, as_point(t, &tp)?) else {
            summary.dropped_missing += 1;
            continue;
        };
        check_inside(src, sw, sh, &sp)?;
        check_inside(tgt, tw, th, &tp)?;
        keypoints.push(KeypointPair { src, tgt });
    }
    let id = match obj.get("filename") {
        Some(v) => {
            let name = as_str(v, &p("filename"))?;
            Path::new(&name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(name)
        }
        None => stem.to_string(),
    };
    Ok(PairAnnotation {
        pair_id: sanitize_id(&id),
        category: obj.get("category").map(|v| as_str(v, &p("category"))).transpose()?.unwrap_or_default(),
        src_image_w: sw,
        src_image_h: sh,
        tgt_image_w: tw,
        tgt_image_h: th,
        tgt_bbox_w: bbox.map(|b| b.0),
        tgt_bbox_h: bbox.map(|b| b.1),
        keypoints,
    })
}

fn input_files(input: &Path) -> CliResult<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .at(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(input)?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    files.sort();
    if files.is_empty() {
        return Err(CliError::data("no .json files found").at(input));
    }
    Ok(files)
}

/// Reads one file, one JSON array of records or a directory of `.json` files
/// (in name order).
pub fn ingest_annotations(input: &Path, format: Format) -> CliResult<(Vec<PairAnnotation>, IngestSummary)> {
    let mut summary = IngestSummary::default();
    let mut out = Vec::new();
    for file in input_files(input)? {
        let value = read_json_value(&file)?;
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let records: Vec<(String, &Value)> = match &value {
            Value::Array(items) => items.iter().enumerate().map(|(i, v)| (format!("[{i}]."), v)).collect(),
            v => vec![(String::new(), v)],
        };
        for (path, record) in records {
            let ann = match format {
                Format::SimpleJson => parse_simple(record, &path, &mut summary),
                Format::SpairJson => parse_spair(record, &path, &stem, &mut summary),
            }
            .map_err(|m| CliError::data(m).at(&file))?;
            ann.validate().map_err(|e| CliError::from(e).at(&file))?;
            summary.keypoints += ann.keypoints.len();
            out.push(ann);
        }
    }
    let mut ids: Vec<&str> = out.iter().map(|a| a.pair_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::data(format!("duplicate pair_id {:?}", w[0])).at(input));
    }
    summary.pairs = out.len();
    Ok((out, summary))
}

/// Annotations from a JSON file holding one canonical record or an array.
pub fn read_annotations(path: &Path) -> CliResult<Vec<PairAnnotation>> {
    let value = read_json_value(path)?;
    let anns: Vec<PairAnnotation> = match value {
        Value::Array(_) => serde_json::from_value(value),
        v => serde_json::from_value(v).map(|a| vec![a]),
    }
    .map_err(|e| CliError::data(e.to_string()).at(path))?;
    for a in &anns {
        a.validate().map_err(|e| CliError::from(e).at(path))?;
    }
    Ok(anns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const SIMPLE: &str = r#"{
        "pair_id": "cat-1", "category": "cat",
        "src_image_w": 100, "src_image_h": 80, "tgt_image_w": 120, "tgt_image_h": 90,
        "keypoints": [
            {"src": [10, 10], "tgt": [20, 20]},
            {"src": [30, 12], "tgt": [40, 22]},
            {"src": [50, 14], "tgt": [60, 24]}
        ]
    }"#;

    #[test]
    fn simple_three_keypoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.json", SIMPLE);
        let (anns, summary) = ingest_annotations(&p, Format::SimpleJson).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].keypoints.len(), 3);
        assert_eq!(anns[0].category, "cat");
        assert_eq!(summary.keypoints, 3);
    }

    #[test]
    fn simple_drops_flagged_keypoints() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.json",
            r#"[{"pair_id":"x","src_image_w":10,"src_image_h":10,"tgt_image_w":10,"tgt_image_h":10,
                "keypoints":[{"src":[1,1],"tgt":[1,1]},{"src":null,"tgt":[1,1]},{"src":[1,1],"tgt":[2,2],"visible":false},
                             {"src":[1,1],"tgt":[2,2],"occluded":true},{"src":[-1,-1],"tgt":[2,2]}]}]"#,
        );
        let (anns, summary) = ingest_annotations(&p, Format::SimpleJson).unwrap();
        assert_eq!(anns[0].keypoints.len(), 1);
        assert_eq!((summary.dropped_missing, summary.dropped_occluded), (2, 2));
    }

    #[test]
    fn out_of_bounds_names_the_keypoint() {
        let dir = tempfile::tempdir().unwrap();
        let body = SIMPLE.replace("[60, 24]", "[160, 24]");
        let p = write(dir.path(), "bad.json", &body);
        let err = ingest_annotations(&p, Format::SimpleJson).unwrap_err();
        assert!(err.message.contains("bad.json") && err.message.contains("keypoints[2].tgt"), "{}", err.message);
    }

    #[test]
    fn schema_errors_name_file_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.json", &SIMPLE.replace("\"tgt_image_h\": 90", "\"tgt_image_h\": \"90\""));
        let err = ingest_annotations(&p, Format::SimpleJson).unwrap_err();
        assert!(err.message.contains("b.json: tgt_image_h"), "{}", err.message);
        let p = write(dir.path(), "c.json", r#"[{}, {}]"#);
        let err = ingest_annotations(&p, Format::SimpleJson).unwrap_err();
        assert!(err.message.contains("[0].src_image_w: missing"), "{}", err.message);
    }

    #[test]
    fn spair_record_with_bbox() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "000001-a-b:cat.json",
            r#"{"filename":"000001-a-b:cat.jpg","category":"cat","src_imsize":[500,375,3],"trg_imsize":[400,300,3],
                "src_bndbox":[0,0,10,10],"trg_bndbox":[100,50,300,250],
                "src_kps":[[10,20],[30,40],null],"trg_kps":[[15,25],[35,45],[1,1]]}"#,
        );
        write(dir.path(), "notes.txt", "ignored");
        let (anns, summary) = ingest_annotations(dir.path(), Format::SpairJson).unwrap();
        let a = &anns[0];
        assert_eq!(a.pair_id, "000001-a-b_cat");
        assert_eq!((a.src_image_w, a.src_image_h, a.tgt_image_w, a.tgt_image_h), (500, 375, 400, 300));
        assert_eq!((a.tgt_bbox_w, a.tgt_bbox_h), (Some(200.0), Some(200.0)));
        assert!(corrfuse::metrics::supports_mode(a, corrfuse::ThresholdMode::Bbox));
        assert_eq!(a.keypoints.len(), 2);
        assert_eq!(summary.dropped_missing, 1);
    }

    #[test]
    fn spair_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.json",
            r#"{"src_imsize":[5,5],"trg_imsize":[5,5],"src_kps":[[1,1]],"trg_kps":[]}"#,
        );
        let err = ingest_annotations(&p, Format::SpairJson).unwrap_err();
        assert!(err.message.contains("trg_kps"), "{}", err.message);
    }
}
