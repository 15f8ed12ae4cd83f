use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeSpace, AttributeVector, Lexicon, PromptBank, Vocab};
use crate::datapipe::{hflip, image_to_tensor, load_rgb, Manifest, ManifestRecord, FLIP_PROB};
use crate::encoders::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{site, Checkpoint, Graph, RngStream, Tensor};
use crate::objectives::{forward_losses, BatchPlan, LossReport, Mode, Objective, Sample};

use super::config::RunConfig;
use super::optim::{clip_grad_norm, lr_at, AdamW, AdamWConfig};

/// Decoded, normalized training examples held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ManifestRecord>,
    pub pixels: Vec<Tensor<f32>>,
    pub tokens: Vec<Vec<u32>>,
    pub attributes: Vec<AttributeVector>,
}

impl Dataset {
    /// Records without attribute labels are annotated from their captions.
    pub fn load(
        manifest: &Manifest,
        vocab: &Vocab,
        model: &ModelConfig,
        space: &AttributeSpace,
        lexicon: &Lexicon,
    ) -> Result<Self> {
        let (h, w) = (model.image.image_height, model.image.image_width);
        let pixels = manifest
            .records
            .par_iter()
            .map(|r| Ok(image_to_tensor(&load_rgb(&manifest.image_path(r))?, h, w)))
            .collect::<Result<Vec<_>>>()?;
        let max = model.text.max_tokens;
        Ok(Self {
            records: manifest.records.clone(),
            pixels,
            tokens: manifest.records.iter().map(|r| vocab.tokenize_to(&r.caption, max)).collect(),
            attributes: manifest
                .records
                .iter()
                .map(|r| r.attributes.clone().unwrap_or_else(|| lexicon.annotate(&r.caption, space).attributes))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Caption words plus every prompt word, capped at `cap` entries.
pub fn build_vocab(manifest: &Manifest, space: &AttributeSpace, cap: usize) -> Result<Vocab> {
    let prompts = crate::attributes::render_prompts(space);
    Vocab::build(
        manifest.records.iter().map(|r| r.caption.as_str()),
        prompts.iter().map(|p| p.text.as_str()),
        cap,
    )
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub grad_norm: f64,
    /// The update was aborted because of a non-finite gradient.
    pub skipped: bool,
    #[serde(flatten)]
    pub losses: LossReport,
}

pub struct Trainer<'d> {
    cfg: RunConfig,
    mode: Mode,
    data: &'d Dataset,
    prompts: PromptBank,
    vocab_size: usize,
    model: Model<f32>,
    optim: AdamW<f32>,
    step: u64,
    epoch: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(cfg: RunConfig, mode: Mode, data: &'d Dataset, prompts: PromptBank, model: Model<f32>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::config("training manifest is empty"));
        }
        let vocab_size = model.config().text.vocab_size;
        let mut optim = AdamW::new(
            model.params(),
            AdamWConfig {
                weight_decay: cfg.weight_decay,
                ..Default::default()
            },
        );
        optim.set_lr_scale(model.temperature_id(), cfg.temperature_lr_scale);
        let t = Self {
            cfg,
            mode,
            data,
            prompts,
            vocab_size,
            model,
            optim,
            step: 0,
            epoch: 0,
        };
        lr_at(0, t.total_steps(), t.warmup_steps(), t.cfg.peak_lr, t.cfg.floor_lr)?;
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.data.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.cfg.epochs as u64
    }

    pub fn warmup_steps(&self) -> u64 {
        self.cfg.warmup_for(self.steps_per_epoch())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Sample order for an epoch, drawn from its own stream.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        RngStream::for_site(self.cfg.seed, site::SHUFFLE, epoch as u64).shuffle(&mut order);
        order
    }

    /// Forward, backward, clip and update on the given samples.
    pub fn train_step(&mut self, indices: &[usize]) -> Result<StepLog> {
        let lr = lr_at(self.step, self.total_steps(), self.warmup_steps(), self.cfg.peak_lr, self.cfg.floor_lr)?;
        let seed = self.cfg.seed;
        let flips = RngStream::for_site(seed, site::FLIP, self.step);
        let pixels: Vec<Tensor<f32>> = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                if flips.split(k as u64).coin(FLIP_PROB) {
                    hflip(&self.data.pixels[i])
                } else {
                    self.data.pixels[i].clone()
                }
            })
            .collect();
        let tokens: Vec<&[u32]> = indices.iter().map(|&i| self.data.tokens[i].as_slice()).collect();
        let attrs: Vec<&AttributeVector> = indices.iter().map(|&i| &self.data.attributes[i]).collect();
        let plan = BatchPlan::build_with(
            &tokens,
            &attrs,
            &self.prompts,
            self.vocab_size,
            self.cfg.mask_prob,
            seed,
            self.step,
        );
        let batch: Vec<Sample<f32>> = (0..indices.len())
            .map(|k| Sample {
                pixels: &pixels[k],
                tokens: tokens[k],
                attributes: attrs[k],
            })
            .collect();
        let objective = Objective {
            beta: self.cfg.beta,
            mode: self.mode,
            smoothing: self.cfg.smoothing,
        };

        let (losses, mut grads) = {
            let g = Graph::new();
            let p = self.model.bind(&g);
            let out = forward_losses(&self.model, &p, &batch, &self.prompts, &plan, &objective)?;
            out.total.backward()?;
            (out.report, p.grads())
        };
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.grad_clip);
        let skipped = match self.optim.step(self.model.params_mut(), &grads, lr) {
            Ok(()) => {
                self.model.clamp_temperature();
                false
            }
            Err(Error::Numeric(msg)) => {
                log::warn!("step {} aborted: {msg}", self.step);
                true
            }
            Err(e) => return Err(e),
        };
        let log = StepLog {
            step: self.step + 1,
            epoch: self.epoch,
            lr,
            grad_norm,
            skipped,
            losses,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs the next epoch, handing every step's log to `sink`.
    pub fn run_epoch(&mut self, mut sink: impl FnMut(&StepLog) -> Result<()>) -> Result<()> {
        let order = self.epoch_order(self.epoch);
        for chunk in order.chunks(self.cfg.batch_size) {
            let log = self.train_step(chunk)?;
            sink(&log)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Optimizer moments and progress counters.
    pub fn state_checkpoint(&self) -> Checkpoint {
        let mut ck = self.optim.to_checkpoint(self.model.params());
        ck.push("train.step", &Tensor::<f64>::scalar(self.step as f64));
        ck.push("train.epoch", &Tensor::<f64>::scalar(self.epoch as f64));
        ck
    }

    pub fn restore(&mut self, model: &Checkpoint, state: &Checkpoint) -> Result<()> {
        self.model.load_checkpoint(model)?;
        self.optim.load_checkpoint(state, self.model.params())?;
        self.step = state.tensor::<f64>("train.step")?.data()[0] as u64;
        self.epoch = state.tensor::<f64>("train.epoch")?.data()[0] as usize;
        Ok(())
    }
}
