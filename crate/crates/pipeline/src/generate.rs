//! `generate`: one negative per image and method, mirrored under the output
//! tree, with a JSON-lines manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nsneg_core::patch_tile::{generate_patch_negative_detailed, TileConfig};
use nsneg_core::raster::{load_image, save_image, Image};
use nsneg_core::texture_synth::{generate_texture_negative, SynthConfig};
use nsneg_core::{derive_seed, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::PipelineError;

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const OVERLAP_FALLBACK_FLAG: &str = "overlap-fallback";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Texture,
    Patch,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Texture => "texture",
            Method::Patch => "patch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodSelection {
    Texture,
    Patch,
    Both,
}

impl MethodSelection {
    pub fn methods(self) -> &'static [Method] {
        match self {
            MethodSelection::Texture => &[Method::Texture],
            MethodSelection::Patch => &[Method::Patch],
            MethodSelection::Both => &[Method::Texture, Method::Patch],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub methods: MethodSelection,
    pub global_seed: u64,
    pub workers: usize,
    pub tile: TileConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, methods: MethodSelection) -> Self {
        Self {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            methods,
            global_seed: 0,
            workers: 1,
            tile: TileConfig::default(),
            synth: SynthConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::InvalidConfig("workers must be >= 1".into()));
        }
        self.tile
            .clone()
            .validated()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.synth
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }
}

/// One manifest line. Failed items carry `error` and no `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub method: Method,
    pub params: serde_json::Value,
    pub seed: u64,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestEntry {
    pub fn is_success(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub written: usize,
    pub failures: usize,
    pub manifest: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Image files under `root`, as sorted `/`-separated relative paths.
pub fn list_images(root: &Path) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| PipelineError::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)));
        if !is_image {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walkdir yields paths under root");
        let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        out.push(parts.join("/"));
    }
    out.sort();
    Ok(out)
}

/// `<method>/<relative path with a .png extension>`.
pub fn output_relpath(input_rel: &str, method: Method) -> String {
    let stem = match input_rel.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() && !stem.ends_with('/') => stem,
        _ => input_rel,
    };
    format!("{}/{stem}.png", method.name())
}

pub fn item_seed(global_seed: u64, input_rel: &str, method: Method) -> u64 {
    derive_seed(global_seed, format!("{input_rel}:{}", method.name()).as_bytes())
}

/// Generated image plus manifest flags; errors are rendered for the manifest.
fn run_method(
    source: &Image,
    method: Method,
    cfg: &PipelineConfig,
    rng: &mut RngStream,
) -> Result<(Image, Vec<String>), String> {
    match method {
        Method::Texture => generate_texture_negative(source, &cfg.synth, rng)
            .map(|image| (image, Vec::new()))
            .map_err(|e| format!("{e:?}")),
        Method::Patch => generate_patch_negative_detailed(source, &cfg.tile, rng)
            .map(|n| {
                let flags = if n.layout.overlap_fallback {
                    vec![OVERLAP_FALLBACK_FLAG.to_string()]
                } else {
                    Vec::new()
                };
                (n.image, flags)
            })
            .map_err(|e| format!("{e:?}")),
    }
}

fn method_params(method: Method, cfg: &PipelineConfig) -> serde_json::Value {
    let v = match method {
        Method::Texture => serde_json::to_value(&cfg.synth),
        Method::Patch => serde_json::to_value(&cfg.tile),
    };
    v.expect("configs serialize")
}

fn process_item(input_rel: &str, method: Method, cfg: &PipelineConfig) -> Result<ManifestEntry, PipelineError> {
    let seed = item_seed(cfg.global_seed, input_rel, method);
    let mut entry = ManifestEntry {
        input: input_rel.to_string(),
        output: None,
        method,
        params: method_params(method, cfg),
        seed,
        flags: Vec::new(),
        error: None,
    };
    let source = match load_image(cfg.input_dir.join(input_rel)) {
        Ok(img) => img,
        Err(e) => {
            entry.error = Some(format!("{e:?}"));
            return Ok(entry);
        }
    };
    match run_method(&source, method, cfg, &mut RngStream::new(seed)) {
        Ok((image, flags)) => {
            let rel = output_relpath(input_rel, method);
            let path = cfg.output_dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| PipelineError::OutputNotWritable {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            save_image(&image, &path).map_err(|e| PipelineError::OutputNotWritable {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            entry.output = Some(rel);
            entry.flags = flags;
        }
        Err(e) => entry.error = Some(e),
    }
    Ok(entry)
}

/// Runs every (image, method) item on a pool of `cfg.workers` threads.
/// Unreadable or too-small images become failure entries; only IO problems
/// on the output side abort the run.
pub fn generate_command(cfg: &PipelineConfig) -> Result<GenerateSummary, PipelineError> {
    cfg.validate()?;
    if !cfg.input_dir.is_dir() {
        return Err(PipelineError::InputDirMissing(cfg.input_dir.clone()));
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|source| PipelineError::OutputNotWritable {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let inputs = list_images(&cfg.input_dir)?;
    let items: Vec<(&str, Method)> = inputs
        .iter()
        .flat_map(|rel| cfg.methods.methods().iter().map(move |&m| (rel.as_str(), m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let entries = pool.install(|| {
        items
            .par_iter()
            .map(|&(rel, method)| process_item(rel, method, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let manifest = cfg.output_dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &entries)?;
    let written = entries.iter().filter(|e| e.is_success()).count();
    Ok(GenerateSummary {
        written,
        failures: entries.len() - written,
        manifest,
        entries,
    })
}

fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|source| PipelineError::OutputNotWritable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for entry in entries {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, PipelineError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(PipelineError::from))
        .collect()
}
