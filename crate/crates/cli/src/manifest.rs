//! Pair manifests: which files make up each image pair.
//!
//! A manifest is either one pair object or `{"schema_version": 1, "pairs": [...]}`.
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use corrfuse::PairAnnotation;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io::read_json_value;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    #[serde(default)]
    pub image: Option<PathBuf>,
    /// SD decoder-layer maps, in layer order.
    #[serde(default)]
    pub sd: Vec<PathBuf>,
    #[serde(default)]
    pub dino: Option<PathBuf>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AnnotationRef {
    Path(PathBuf),
    Inline(Box<PairAnnotation>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    pub pair_id: String,
    pub src: ImageEntry,
    pub tgt: ImageEntry,
    #[serde(default)]
    pub annotation: Option<AnnotationRef>,
}

impl PairManifest {
    pub fn annotation(&self) -> CliResult<Option<PairAnnotation>> {
        let ann = match &self.annotation {
            None => return Ok(None),
            Some(AnnotationRef::Inline(a)) => (**a).clone(),
            Some(AnnotationRef::Path(p)) => {
                serde_json::from_value(read_json_value(p)?).map_err(|e| CliError::data(e.to_string()).at(p))?
            }
        };
        ann.validate()
            .map_err(|e| CliError::from(e).at(Path::new(&format!("annotation of pair {}", self.pair_id))))?;
        Ok(Some(ann))
    }

    fn paths_mut(&mut self) -> Vec<(String, &mut PathBuf)> {
        let mut out = Vec::new();
        for (side, e) in [("src", &mut self.src), ("tgt", &mut self.tgt)] {
            if let Some(p) = e.image.as_mut() {
                out.push((format!("{side}.image"), p));
            }
            for (i, p) in e.sd.iter_mut().enumerate() {
                out.push((format!("{side}.sd[{i}]"), p));
            }
            if let Some(p) = e.dino.as_mut() {
                out.push((format!("{side}.dino"), p));
            }
            if let Some(p) = e.mask.as_mut() {
                out.push((format!("{side}.mask"), p));
            }
        }
        if let Some(AnnotationRef::Path(p)) = self.annotation.as_mut() {
            out.push(("annotation".into(), p));
        }
        out
    }
}

fn valid_pair_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

pub fn load_manifest(path: &Path) -> CliResult<Vec<PairManifest>> {
    let value = read_json_value(path)?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::data("manifest must be a JSON object").at(path))?;
    match obj.get("schema_version") {
        None => return Err(CliError::data("schema_version: missing").at(path)),
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(CliError::data(format!("schema_version: unsupported value {v}, expected {SCHEMA_VERSION}")).at(path))
        }
    }
    let entries: Vec<(String, Value)> = match obj.get("pairs") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("pairs[{i}]"), v.clone()))
            .collect(),
        Some(_) => return Err(CliError::data("pairs: expected an array").at(path)),
        None => {
            let mut single = obj.clone();
            single.remove("schema_version");
            vec![(String::new(), Value::Object(single))]
        }
    };
    if entries.is_empty() {
        return Err(CliError::data("pairs: empty").at(path));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(entries.len());
    for (field, v) in entries {
        let prefix = if field.is_empty() { String::new() } else { format!("{field}.") };
        let mut pair: PairManifest =
            serde_json::from_value(v).map_err(|e| CliError::data(format!("{field}: {e}")).at(path))?;
        if !valid_pair_id(&pair.pair_id) {
            return Err(CliError::data(format!(
                "{prefix}pair_id: {:?} must be non-empty and use only [A-Za-z0-9._-]",
                pair.pair_id
            ))
            .at(path));
        }
        if !seen.insert(pair.pair_id.clone()) {
            return Err(CliError::data(format!("{prefix}pair_id: duplicate {:?}", pair.pair_id)).at(path));
        }
        for (name, p) in pair.paths_mut() {
            *p = base.join(&*p);
            if !p.is_file() {
                return Err(CliError::runtime(format!("{prefix}{name}: file not found: {}", p.display())).at(path));
            }
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Required path or a data-format error naming the field.
pub fn require<'a>(p: Option<&'a PathBuf>, pair: &PairManifest, field: &str) -> CliResult<&'a Path> {
    p.map(PathBuf::as_path)
        .ok_or_else(|| CliError::data(format!("pair {}: {field} is required for this command", pair.pair_id)))
}
