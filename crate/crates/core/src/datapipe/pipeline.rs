use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::clients::{CaptionClient, ClientConfig, PoseClient};
use super::filters::{filter_filesize, filter_grayscale, DropReason, GRAYSCALE_THRESHOLD, MIN_FILE_BYTES};
use super::manifest::{Manifest, ManifestRecord};
use super::recrop::{recrop, Recrop, DEFAULT_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_file_bytes: u64,
    pub grayscale_threshold: f64,
    pub recrop_margin: f64,
    pub clients: ClientConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_file_bytes: MIN_FILE_BYTES,
            grayscale_threshold: GRAYSCALE_THRESHOLD,
            recrop_margin: DEFAULT_MARGIN,
            clients: ClientConfig::default(),
        }
    }
}

/// Per-rule drop counts; every dropped record is counted under exactly one rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub total: usize,
    pub kept: usize,
    pub recropped: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

impl PipelineReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// A surviving record, with its re-cropped image if one was made.
#[derive(Debug, Clone)]
pub struct Kept {
    pub record: ManifestRecord,
    pub crop: Option<RgbImage>,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub kept: Vec<Kept>,
    pub report: PipelineReport,
}

/// External services used by the pipeline; both optional.
#[derive(Clone, Copy, Default)]
pub struct Services<'a> {
    pub pose: Option<&'a dyn PoseClient>,
    pub caption: Option<&'a dyn CaptionClient>,
}

/// File size, decode, grayscale, then (with a pose client) person re-crop and
/// (with a caption client) caption calibration. Records run in parallel; output
/// keeps input order.
pub fn filter_manifest(manifest: &Manifest, cfg: &FilterConfig, services: Services<'_>) -> FilterResult {
    let outcomes: Vec<std::result::Result<Kept, DropReason>> = manifest
        .records
        .par_iter()
        .map(|rec| filter_one(manifest, rec, cfg, services))
        .collect();
    let mut report = PipelineReport {
        total: outcomes.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for o in outcomes {
        match o {
            Ok(k) => {
                report.recropped += k.crop.is_some() as usize;
                kept.push(k);
            }
            Err(reason) => *report.dropped.entry(reason).or_default() += 1,
        }
    }
    report.kept = kept.len();
    FilterResult { kept, report }
}

fn filter_one(
    manifest: &Manifest,
    rec: &ManifestRecord,
    cfg: &FilterConfig,
    services: Services<'_>,
) -> std::result::Result<Kept, DropReason> {
    let path = manifest.image_path(rec);
    filter_filesize(&path, cfg.min_file_bytes)?;
    let image = image::open(&path).map_err(|e| {
        log::error!("cannot decode {}: {e}", path.display());
        DropReason::CorruptImage
    })?;
    filter_grayscale(&image, cfg.grayscale_threshold)?;
    let mut rgb = None;
    let mut crop = None;
    if let Some(pose) = services.pose {
        let img = image.to_rgb8();
        if let Recrop::Cropped(c) = recrop(&img, pose, cfg.recrop_margin, cfg.clients.retries)? {
            crop = Some(c);
        }
        rgb = Some(img);
    }
    let mut record = rec.clone();
    if let Some(cap) = services.caption {
        let img = crop.clone().or(rgb).unwrap_or_else(|| image.to_rgb8());
        record.caption = cap.calibrate(&img, &rec.caption).map_err(|e| {
            log::error!("caption client failed for {}: {e}", rec.image);
            DropReason::ClientError
        })?;
    }
    Ok(Kept { record, crop })
}

/// Writes surviving records as a manifest at `out_path`. Crops are saved as PNG
/// under `recrop/` next to it; other image paths are rebased onto the output directory.
pub fn write_filtered(result: &FilterResult, source: &Manifest, out_path: &Path) -> Result<Manifest> {
    let out_dir = out_path.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&out_dir)?;
    let mut records = Vec::with_capacity(result.kept.len());
    for (i, k) in result.kept.iter().enumerate() {
        let mut rec = k.record.clone();
        if let Some(crop) = &k.crop {
            let stem = Path::new(&rec.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("img{i}"));
            let rel = PathBuf::from("recrop").join(format!("{i:06}_{stem}.png"));
            fs::create_dir_all(out_dir.join("recrop"))?;
            crop.save(out_dir.join(&rel))?;
            rec.image = rel.to_string_lossy().into_owned();
        } else {
            rec.image = rebase(&source.root, &rec.image, &out_dir)?;
        }
        records.push(rec);
    }
    let manifest = Manifest::new(out_dir, records);
    manifest.save(out_path)?;
    Ok(manifest)
}

fn rebase(root: &Path, image: &str, out_dir: &Path) -> Result<String> {
    let same = fs::canonicalize(root).ok().zip(fs::canonicalize(out_dir).ok()).is_some_and(|(a, b)| a == b);
    if same || Path::new(image).is_absolute() {
        return Ok(image.to_string());
    }
    Ok(fs::canonicalize(root.join(image))?.to_string_lossy().into_owned())
}
