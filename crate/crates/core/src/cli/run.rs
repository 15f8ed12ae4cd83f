use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attributes::{render_prompts, AttributeSpace, AttributeVector, Lexicon, PromptBank, Vocab};
use crate::datapipe::{
    filter_manifest, image_to_tensor, load_rgb, write_filtered, CaptionClient, FilterResult, HttpCaptionClient,
    HttpPoseClient, Manifest, PoseClient, Services, StubPoseClient,
};
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::numcore::{Checkpoint, Tensor};
use crate::objectives::{LossReport, Mode};
use crate::retrieval::{
    attr_metrics, relevance, retrieval_metrics, AttrMetrics, Gallery, GalleryItem, RankedResult, Retriever,
    RetrievalMetrics,
};

use super::config::RunConfig;
use super::train::{build_vocab, Dataset, StepLog, Trainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const CKPT_DIR: &str = "ckpt";
pub const FINAL_CKPT: &str = "final.aptm";

pub fn epoch_checkpoint(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(CKPT_DIR).join(format!("epoch_{epoch:04}.aptm"))
}

pub fn epoch_state(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(CKPT_DIR).join(format!("state_{epoch:04}.aptm"))
}

/// Latest epoch with both a model checkpoint and optimizer state.
pub fn latest_epoch(run_dir: &Path) -> Option<usize> {
    let entries = fs::read_dir(run_dir.join(CKPT_DIR)).ok()?;
    entries
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_prefix("epoch_")?.strip_suffix(".aptm")?.parse::<usize>().ok()
        })
        .filter(|&e| epoch_state(run_dir, e).exists())
        .max()
}

/// What a training run leaves behind.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub steps: u64,
    pub epochs: usize,
    pub skipped_steps: usize,
    pub first: Option<LossReport>,
    pub last: Option<LossReport>,
    pub checkpoint: Option<PathBuf>,
}

/// A trained model together with the vocabulary and config it was trained with.
pub struct RunArtifacts {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub model: Model<f32>,
}

impl RunArtifacts {
    /// Reads `config.toml` and `vocab.txt` from `run_dir` and loads `checkpoint`
    /// (the run's final checkpoint by default).
    pub fn load(run_dir: &Path, checkpoint: Option<&Path>) -> Result<Self> {
        let config = RunConfig::load(run_dir.join(CONFIG_FILE))?;
        let vocab = Vocab::load(run_dir.join(VOCAB_FILE))?;
        if vocab.len() != config.model.text.vocab_size {
            return Err(Error::CheckpointMismatch(format!(
                "vocab.txt has {} tokens but the config expects {}",
                vocab.len(),
                config.model.text.vocab_size
            )));
        }
        let path = checkpoint.map_or_else(|| run_dir.join(CKPT_DIR).join(FINAL_CKPT), Path::to_path_buf);
        let model = Model::load(config.model.clone(), &path)?;
        Ok(Self { config, vocab, model })
    }
}

/// Trains in `run_dir`: config snapshot, vocabulary, loss log, and a checkpoint
/// plus optimizer state after every epoch and a final checkpoint at completion.
///
/// `init` names a finished run whose vocabulary and final weights seed the model.
/// With `resume`, training continues from the latest epoch in `run_dir`.
pub fn train(
    mode: Mode,
    cfg: RunConfig,
    manifest_path: &Path,
    run_dir: &Path,
    init: Option<&Path>,
    resume: bool,
) -> Result<TrainSummary> {
    let manifest = Manifest::load(manifest_path)?;
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    fs::create_dir_all(run_dir.join(CKPT_DIR))?;

    let resume_epoch = if resume { latest_epoch(run_dir) } else { None };
    if resume && resume_epoch.is_none() {
        return Err(Error::config(format!("no epoch checkpoint to resume in {}", run_dir.display())));
    }
    let mut cfg = cfg;
    let (vocab, model) = if resume_epoch.is_some() {
        let vocab = Vocab::load(run_dir.join(VOCAB_FILE))?;
        cfg.model.text.vocab_size = vocab.len();
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        (vocab, model)
    } else if let Some(init) = init {
        let base = RunArtifacts::load(init, None)?;
        cfg.model = base.config.model.clone();
        (base.vocab, base.model)
    } else {
        let vocab = build_vocab(&manifest, &space, cfg.vocab_cap)?;
        cfg.model.text.vocab_size = vocab.len();
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        (vocab, model)
    };
    cfg.validate()?;
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    vocab.save(run_dir.join(VOCAB_FILE))?;

    let data = Dataset::load(&manifest, &vocab, &cfg.model, &space, &lexicon)?;
    let prompts = PromptBank::new(&space, &vocab);
    let mut trainer = Trainer::new(cfg.clone(), mode, &data, prompts, model)?;
    if let Some(epoch) = resume_epoch {
        trainer.restore(
            &Checkpoint::load(epoch_checkpoint(run_dir, epoch))?,
            &Checkpoint::load(epoch_state(run_dir, epoch))?,
        )?;
        log::info!("resumed at epoch {epoch}, step {}", trainer.step());
    }

    let log_path = run_dir.join(LOSS_LOG);
    let mut history = if resume_epoch.is_some() { read_loss_log(&log_path)? } else { Vec::new() };
    history.retain(|l| l.step <= trainer.step());
    let mut out = BufWriter::new(fs::File::create(&log_path)?);
    for l in &history {
        write_line(&mut out, l)?;
    }

    let stop = cfg.stop_after_epoch.unwrap_or(cfg.epochs).min(cfg.epochs);
    while trainer.epoch() < stop {
        trainer.run_epoch(|l| {
            log::debug!("step {} total {:.5}", l.step, l.losses.total);
            history.push(*l);
            write_line(&mut out, l)
        })?;
        out.flush()?;
        let e = trainer.epoch();
        trainer.model().save(epoch_checkpoint(run_dir, e))?;
        trainer.state_checkpoint().save(epoch_state(run_dir, e))?;
        log::info!("epoch {e}/{} done at step {}", cfg.epochs, trainer.step());
    }
    let checkpoint = if trainer.is_finished() {
        let path = run_dir.join(CKPT_DIR).join(FINAL_CKPT);
        trainer.model().save(&path)?;
        Some(path)
    } else {
        None
    };
    Ok(TrainSummary {
        mode,
        steps: trainer.step(),
        epochs: trainer.epoch(),
        skipped_steps: history.iter().filter(|l| l.skipped).count(),
        first: history.first().map(|l| l.losses),
        last: history.last().map(|l| l.losses),
        checkpoint,
    })
}

fn write_line(out: &mut impl Write, log: &StepLog) -> Result<()> {
    serde_json::to_writer(&mut *out, log)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_loss_log(path: &Path) -> Result<Vec<StepLog>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn load_pixels(manifest: &Manifest, model: &Model<f32>) -> Result<Vec<Tensor<f32>>> {
    use rayon::prelude::*;
    let (h, w) = (model.config().image.image_height, model.config().image.image_width);
    manifest
        .records
        .par_iter()
        .map(|r| Ok(image_to_tensor(&load_rgb(&manifest.image_path(r))?, h, w)))
        .collect()
}

/// One query's ranking as written to `rankings.jsonl` (top ten only).
#[derive(Debug, Clone, Serialize)]
struct RankingLine<'a> {
    query_id: &'a str,
    person_id: &'a str,
    caption: &'a str,
    top: Vec<(&'a str, f64, Option<f64>)>,
}

/// Every caption queries a gallery of every image; an image is relevant when it
/// shows the query's person. Writes `metrics.json` and `rankings.jsonl` to `out_dir`.
pub fn evaluate(
    artifacts: &RunArtifacts,
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<(RetrievalMetrics, Vec<RankedResult>)> {
    let model = &artifacts.model;
    let pixels = load_pixels(manifest, model)?;
    let items: Vec<GalleryItem> = manifest
        .records
        .iter()
        .map(|r| GalleryItem {
            image_id: r.image.clone(),
            person_id: r.person().to_string(),
        })
        .collect();
    let gallery = Gallery::encode(model, items, &pixels)?;
    let max = model.config().text.max_tokens;
    let queries: Vec<(String, Vec<u32>)> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("q{i:06}"), artifacts.vocab.tokenize_to(&r.caption, max)))
        .collect();
    let results = Retriever::new(model, artifacts.config.shortlist).search_all(&queries, &gallery)?;
    let rankings: Vec<_> = results
        .iter()
        .zip(&manifest.records)
        .map(|(res, r)| relevance(res, r.person(), gallery.items()))
        .collect();
    let metrics = retrieval_metrics(&rankings);

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    let mut out = BufWriter::new(fs::File::create(out_dir.join("rankings.jsonl"))?);
    for (res, r) in results.iter().zip(&manifest.records) {
        let line = RankingLine {
            query_id: &res.query_id,
            person_id: r.person(),
            caption: &r.caption,
            top: res
                .items
                .iter()
                .take(10)
                .map(|it| (it.image_id.as_str(), it.similarity, it.probability))
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok((metrics, results))
}

/// Attribute predictions and metrics against the manifest labels (or caption
/// annotations where labels are absent). Writes `attr_metrics.json` and
/// `attr_predictions.jsonl` to `out_dir`.
pub fn recognize(
    artifacts: &RunArtifacts,
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<(AttrMetrics, Vec<AttributeVector>, Vec<AttributeVector>)> {
    use rayon::prelude::*;
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    let prompts = PromptBank::new(&space, &artifacts.vocab);
    let pixels = load_pixels(manifest, &artifacts.model)?;
    let retriever = Retriever::new(&artifacts.model, artifacts.config.shortlist);
    let predictions = pixels
        .par_iter()
        .map(|px| retriever.recognize_attributes(px, &prompts))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<AttributeVector> = manifest
        .records
        .iter()
        .map(|r| r.attributes.clone().unwrap_or_else(|| lexicon.annotate(&r.caption, &space).attributes))
        .collect();
    let metrics = attr_metrics(&predictions, &labels);

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("attr_metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    let mut out = BufWriter::new(fs::File::create(out_dir.join("attr_predictions.jsonl"))?);
    for (r, p) in manifest.records.iter().zip(&predictions) {
        serde_json::to_writer(&mut out, &serde_json::json!({ "image": r.image, "attributes": p }))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok((metrics, predictions, labels))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnnotateReport {
    pub records: usize,
    pub annotated: usize,
    pub conflicts: usize,
    /// Known labels per attribute name across the output.
    pub coverage: BTreeMap<String, usize>,
}

/// Fills missing attribute labels from captions (all labels with `overwrite`).
pub fn annotate_manifest(manifest: &Manifest, overwrite: bool) -> (Manifest, AnnotateReport) {
    let space = AttributeSpace::default();
    let lexicon = Lexicon::default_for(&space);
    let mut report = AnnotateReport {
        records: manifest.len(),
        ..Default::default()
    };
    let mut records = manifest.records.clone();
    for r in &mut records {
        if r.attributes.is_some() && !overwrite {
            continue;
        }
        let a = lexicon.annotate(&r.caption, &space);
        for c in &a.conflicts {
            log::warn!("conflicting evidence for '{}' in \"{}\": {:?}", c.attribute, r.caption, c.matches);
        }
        report.conflicts += a.conflicts.len();
        report.annotated += 1;
        r.attributes = Some(a.attributes);
    }
    for r in &records {
        if let Some(a) = &r.attributes {
            for (i, _) in a.known() {
                *report.coverage.entry(space.get(i).name.clone()).or_default() += 1;
            }
        }
    }
    (Manifest::new(manifest.root.clone(), records), report)
}

/// The 54 prompt sentences, one per line, in prompt-index order.
pub fn prompt_lines() -> Vec<String> {
    render_prompts(&AttributeSpace::default()).into_iter().map(|p| p.text).collect()
}

/// Which pose service the filter should use for re-cropping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    None,
    Http,
    /// Offline stand-in that reports one person covering the frame.
    FullFrame,
}

/// Runs the filter chain and writes the surviving manifest to `out_path`.
pub fn filter(
    manifest: &Manifest,
    cfg: &RunConfig,
    pose: PoseSource,
    calibrate: bool,
    out_path: &Path,
) -> Result<FilterResult> {
    let clients = cfg.filter.clients.clone().with_env_overrides();
    let http_pose;
    let stub_pose = StubPoseClient::FullFrame;
    let pose_client: Option<&dyn PoseClient> = match pose {
        PoseSource::None => None,
        PoseSource::FullFrame => Some(&stub_pose),
        PoseSource::Http => {
            http_pose = HttpPoseClient::from_config(&clients)
                .ok_or_else(|| Error::config("re-cropping needs filter.clients.pose_url or APTM_POSE_URL"))?;
            Some(&http_pose)
        }
    };
    let http_caption;
    let caption_client: Option<&dyn CaptionClient> = if calibrate {
        http_caption = HttpCaptionClient::from_config(&clients).ok_or_else(|| {
            Error::config("caption calibration needs filter.clients.caption_url or APTM_CAPTION_URL")
        })?;
        Some(&http_caption)
    } else {
        None
    };
    let mut fcfg = cfg.filter.clone();
    fcfg.clients = clients;
    let result = filter_manifest(
        manifest,
        &fcfg,
        Services {
            pose: pose_client,
            caption: caption_client,
        },
    );
    write_filtered(&result, manifest, out_path)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        any::<f64>().prop_filter("finite", |x| x.is_finite())
    }

    proptest! {
        #[test]
        fn loss_log_round_trips_bit_exactly(step in 1u64..1 << 40, epoch in 0usize..1000, v in prop::array::uniform11(finite())) {
            let log = StepLog {
                step,
                epoch,
                lr: v[0],
                grad_norm: v[1],
                skipped: v[2] < 0.0,
                losses: LossReport {
                    itc: v[2], itm: v[3], mlm: v[4], iac: v[5], iam: v[6], mam: v[7], apl: v[8], total: v[9], temperature: v[10],
                },
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(LOSS_LOG);
            let mut out = Vec::new();
            write_line(&mut out, &log).unwrap();
            fs::write(&path, out).unwrap();
            let back = read_loss_log(&path).unwrap();
            prop_assert_eq!(back.len(), 1);
            let b = back[0];
            let bits = |l: &StepLog| {
                let r = &l.losses;
                [l.lr, l.grad_norm, r.itc, r.itm, r.mlm, r.iac, r.iam, r.mam, r.apl, r.total, r.temperature].map(f64::to_bits)
            };
            prop_assert_eq!(bits(&b), bits(&log));
            prop_assert_eq!((b.step, b.epoch, b.skipped), (log.step, log.epoch, log.skipped));
        }
    }
}
