use std::path::Path;

use crate::attributes::tokenizer::CLS;
use crate::error::{Error, Result};
use crate::numcore::{lit, site, Checkpoint, Graph, RngStream, Scalar, Tensor, Var};

use super::config::{ImageEncoderConfig, ModelConfig};
use super::layers::{pad_bias, Block, CrossBlock, LayerNorm, Linear};
use super::params::{Bound, Init, ParamId, ParamStore};

pub const TEMPERATURE_INIT: f64 = 0.07;
pub const TEMPERATURE_MIN: f64 = 0.001;
pub const TEMPERATURE_MAX: f64 = 0.5;

#[derive(Debug, Clone)]
struct ImageEncoder {
    patch_embed: Linear,
    cls: ParamId,
    pos: ParamId,
    layers: Vec<Block>,
    ln_f: LayerNorm,
}

#[derive(Debug, Clone)]
struct TextEncoder {
    tok_embed: ParamId,
    pos: ParamId,
    layers: Vec<Block>,
    ln_f: LayerNorm,
}

#[derive(Debug, Clone)]
struct CrossEncoder {
    layers: Vec<CrossBlock>,
    ln_f: LayerNorm,
}

#[derive(Debug, Clone)]
struct Heads {
    image_proj: Linear,
    text_proj: Linear,
    match_fc1: Linear,
    match_fc2: Linear,
    mask_fc1: Linear,
    mask_ln: LayerNorm,
    mask_fc2: Linear,
}

/// Image, text and cross encoders with projection and prediction heads.
///
/// Heads are shared between caption and attribute-prompt streams.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    image: ImageEncoder,
    text: TextEncoder,
    cross: CrossEncoder,
    heads: Heads,
    temperature: ParamId,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut init = Init {
            store: &mut store,
            rng: RngStream::for_site(seed, site::INIT, 0),
        };
        let ic = &cfg.image;
        let tc = &cfg.text;
        let (di, dt) = (ic.embed_dim, tc.embed_dim);

        let image = ImageEncoder {
            patch_embed: Linear::new(&mut init, "image.patch_embed", ic.patch_dim(), di),
            cls: init.normal("image.cls".into(), &[1, di]),
            pos: init.normal("image.pos".into(), &[ic.num_patches() + 1, di]),
            layers: (0..ic.num_layers)
                .map(|i| Block::new(&mut init, &format!("image.layers.{i}"), di, ic.num_heads))
                .collect(),
            ln_f: LayerNorm::new(&mut init, "image.ln_f", di),
        };
        let text = TextEncoder {
            tok_embed: init.normal("text.tok_embed".into(), &[tc.vocab_size, dt]),
            pos: init.normal("text.pos".into(), &[tc.max_tokens, dt]),
            layers: (0..tc.num_layers)
                .map(|i| Block::new(&mut init, &format!("text.layers.{i}"), dt, tc.num_heads))
                .collect(),
            ln_f: LayerNorm::new(&mut init, "text.ln_f", dt),
        };
        let cross = CrossEncoder {
            layers: (0..tc.cross_layers)
                .map(|i| CrossBlock::new(&mut init, &format!("cross.layers.{i}"), dt, di, tc.num_heads))
                .collect(),
            ln_f: LayerNorm::new(&mut init, "cross.ln_f", dt),
        };
        let heads = Heads {
            image_proj: Linear::new(&mut init, "heads.image_proj", di, cfg.proj_dim),
            text_proj: Linear::new(&mut init, "heads.text_proj", dt, cfg.proj_dim),
            match_fc1: Linear::new(&mut init, "heads.match.fc1", dt, dt),
            match_fc2: Linear::new(&mut init, "heads.match.fc2", dt, 1),
            mask_fc1: Linear::new(&mut init, "heads.mask.fc1", dt, dt),
            mask_ln: LayerNorm::new(&mut init, "heads.mask.ln", dt),
            mask_fc2: Linear::new(&mut init, "heads.mask.fc2", dt, tc.vocab_size),
        };
        let temperature = init.constant("temperature".into(), TEMPERATURE_INIT, false);
        Ok(Self {
            cfg,
            store,
            image,
            text,
            cross,
            heads,
            temperature,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn bind(&self, graph: &Graph<T>) -> Bound<'_, T> {
        self.store.bind(graph)
    }

    pub fn bind_frozen(&self, graph: &Graph<T>) -> Bound<'_, T> {
        self.store.bind_frozen(graph)
    }

    /// `[3×H×W]` pixels → V with `N^I + 1` rows, row 0 being `[CLS]`.
    pub fn encode_image(&self, p: &Bound<T>, pixels: &Tensor<T>) -> Result<Var<T>> {
        let patches = patchify(pixels, &self.cfg.image)?;
        let x = self.image.patch_embed.forward(p, &p.graph().constant(&patches))?;
        let mut x = Var::concat_rows(&[p.var(self.image.cls), x])?.add(&p.var(self.image.pos))?;
        for layer in &self.image.layers {
            x = layer.forward(p, &x, None)?;
        }
        self.image.ln_f.forward(p, &x)
    }

    /// Token ids (`[CLS]` first, at most `max_tokens`) → one row per token.
    pub fn encode_text(&self, p: &Bound<T>, tokens: &[u32]) -> Result<Var<T>> {
        self.check_tokens(tokens)?;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let emb = p.var(self.text.tok_embed).gather_rows(&ids)?;
        let pos = p.var(self.text.pos).slice_rows(0, ids.len())?;
        let mut x = emb.add(&pos)?;
        let bias = pad_bias(p, tokens)?;
        for layer in &self.text.layers {
            x = layer.forward(p, &x, bias.as_ref())?;
        }
        self.text.ln_f.forward(p, &x)
    }

    /// Fuses text states with image states; output rows match `text` rows.
    pub fn encode_cross(&self, p: &Bound<T>, image: &Var<T>, text: &Var<T>, tokens: &[u32]) -> Result<Var<T>> {
        if text.shape()[0] != tokens.len() {
            return Err(Error::dim(format!(
                "cross encoder got {} text rows for {} tokens",
                text.shape()[0],
                tokens.len()
            )));
        }
        let bias = pad_bias(p, tokens)?;
        let mut x = text.clone();
        for layer in &self.cross.layers {
            x = layer.forward(p, &x, image, bias.as_ref())?;
        }
        self.cross.ln_f.forward(p, &x)
    }

    /// Unit-norm image features, one per input row.
    pub fn project_image(&self, p: &Bound<T>, cls: &Var<T>) -> Result<Var<T>> {
        self.heads.image_proj.forward(p, cls)?.l2_normalize_rows()
    }

    /// Unit-norm text features, one per input row.
    pub fn project_text(&self, p: &Bound<T>, cls: &Var<T>) -> Result<Var<T>> {
        self.heads.text_proj.forward(p, cls)?.l2_normalize_rows()
    }

    /// Pre-sigmoid match score, `[n×1]`.
    pub fn match_logit(&self, p: &Bound<T>, cls: &Var<T>) -> Result<Var<T>> {
        let h = self.heads.match_fc1.forward(p, cls)?.gelu()?;
        self.heads.match_fc2.forward(p, &h)
    }

    pub fn match_probability(&self, p: &Bound<T>, cls: &Var<T>) -> Result<Var<T>> {
        self.match_logit(p, cls)?.sigmoid()
    }

    /// Pre-softmax vocabulary scores, `[n×vocab]`.
    pub fn mask_logits(&self, p: &Bound<T>, rows: &Var<T>) -> Result<Var<T>> {
        let h = self.heads.mask_fc1.forward(p, rows)?.gelu()?;
        let h = self.heads.mask_ln.forward(p, &h)?;
        self.heads.mask_fc2.forward(p, &h)
    }

    pub fn mask_distribution(&self, p: &Bound<T>, rows: &Var<T>) -> Result<Var<T>> {
        self.mask_logits(p, rows)?.softmax(1)
    }

    pub fn temperature(&self, p: &Bound<T>) -> Var<T> {
        p.var(self.temperature)
    }

    pub fn temperature_id(&self) -> ParamId {
        self.temperature
    }

    pub fn temperature_value(&self) -> f64 {
        self.store.get(self.temperature).data()[0].to_f64().unwrap_or(TEMPERATURE_INIT)
    }

    pub fn clamp_temperature(&mut self) {
        let t = self.store.get_mut(self.temperature);
        let v = t.data()[0];
        t.data_mut()[0] = v.max(lit(TEMPERATURE_MIN)).min(lit(TEMPERATURE_MAX));
    }

    /// Parameter ids of the image-side and text-side projections.
    pub fn projection_params(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        let ids = |prefix: &str| -> Vec<ParamId> {
            self.store
                .iter()
                .filter(|(_, n, _)| n.starts_with(prefix))
                .map(|(id, _, _)| id)
                .collect()
        };
        (ids("heads.image_proj."), ids("heads.text_proj."))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint()
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        self.store.load_checkpoint(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(cfg: ModelConfig, path: impl AsRef<Path>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        model.load_checkpoint(&Checkpoint::load(path)?)?;
        Ok(model)
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            image: self.image.clone(),
            text: self.text.clone(),
            cross: self.cross.clone(),
            heads: self.heads.clone(),
            temperature: self.temperature,
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let tc = &self.cfg.text;
        if tokens.is_empty() || tokens.len() > tc.max_tokens {
            return Err(Error::contract(format!(
                "token sequence of length {} (limit {}); truncate before encoding",
                tokens.len(),
                tc.max_tokens
            )));
        }
        if tokens[0] != CLS {
            return Err(Error::contract("token 0 must be [CLS]"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= tc.vocab_size) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary of {}", tc.vocab_size)));
        }
        Ok(())
    }
}

/// `[3×H×W]` → `[N × 3·p·p]`, patches row-major, features ordered (channel, dy, dx).
pub fn patchify<T: Scalar>(pixels: &Tensor<T>, cfg: &ImageEncoderConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let (h, w) = (cfg.image_height, cfg.image_width);
    if pixels.shape() != [3, h, w] {
        return Err(Error::dim(format!("image {:?} does not match configured [3, {h}, {w}]", pixels.shape())));
    }
    if !pixels.all_finite() {
        return Err(Error::numeric("non-finite pixel value"));
    }
    let ps = cfg.patch_size;
    let (gr, gc) = cfg.grid();
    let src = pixels.data();
    let mut out = Vec::with_capacity(pixels.len());
    for pr in 0..gr {
        for pc in 0..gc {
            for c in 0..3 {
                for dy in 0..ps {
                    let start = c * h * w + (pr * ps + dy) * w + pc * ps;
                    out.extend_from_slice(&src[start..start + ps]);
                }
            }
        }
    }
    Tensor::new(vec![gr * gc, cfg.patch_dim()], out)
}
