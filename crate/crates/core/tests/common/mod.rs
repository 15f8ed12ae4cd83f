#![allow(dead_code)]

pub mod corpus;
pub mod oracles;

use aptm::attributes::{AttributeSpace, AttributeVector, Lexicon, PromptBank, Vocab};
use aptm::encoders::{Model, ModelConfig, ParamStore};
use aptm::numcore::{Graph, RngStream, Tensor, Var};
use aptm::objectives::{forward_losses, BatchPlan, Objective, Sample};

pub const CAPTIONS: [&str; 4] = [
    "a man with short hair wears a red shirt and black pants, carrying a backpack.",
    "a young woman with long hair and a hat wears a white shirt with short sleeves and a blue skirt.",
    "a woman with short hair wears a green jacket and gray jeans.",
    "a man with long hair wears a yellow coat with long sleeves and brown shorts.",
];

/// A tiny f64 model with a batch whose captions carry known attributes.
pub struct Fixture {
    pub model: Model<f64>,
    pub vocab: Vocab,
    pub prompts: PromptBank,
    pub pixels: Vec<Tensor<f64>>,
    pub tokens: Vec<Vec<u32>>,
    pub attrs: Vec<AttributeVector>,
}

impl Fixture {
    pub fn new(pairs: usize, dim: usize, seed: u64) -> Self {
        let space = AttributeSpace::default();
        let lexicon = Lexicon::default_for(&space);
        let prompt_texts: Vec<String> = aptm::attributes::render_prompts(&space).into_iter().map(|p| p.text).collect();
        let captions: Vec<&str> = (0..pairs).map(|i| CAPTIONS[i % CAPTIONS.len()]).collect();
        let vocab = Vocab::build(captions.iter().copied(), prompt_texts.iter().map(String::as_str), 4096).unwrap();
        let cfg = ModelConfig::tiny(vocab.len(), dim);
        let model = Model::<f64>::new(cfg.clone(), seed).unwrap();
        let mut rng = RngStream::new(seed, 99);
        let n = 3 * cfg.image.image_height * cfg.image.image_width;
        let pixels = (0..pairs)
            .map(|_| {
                let data: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
                Tensor::from_f64(&[3, cfg.image.image_height, cfg.image.image_width], &data).unwrap()
            })
            .collect();
        let tokens = captions.iter().map(|c| vocab.tokenize(c)).collect();
        let attrs = captions.iter().map(|c| lexicon.annotate(c, &space).attributes).collect();
        Self {
            prompts: PromptBank::new(&space, &vocab),
            model,
            vocab,
            pixels,
            tokens,
            attrs,
        }
    }

    pub fn plan(&self, seed: u64, step: u64) -> BatchPlan {
        let tokens: Vec<&[u32]> = self.tokens.iter().map(Vec::as_slice).collect();
        let attrs: Vec<&AttributeVector> = self.attrs.iter().collect();
        BatchPlan::build(&tokens, &attrs, &self.prompts, self.vocab.len(), seed, step)
    }

    pub fn batch(&self) -> Vec<Sample<'_, f64>> {
        (0..self.pixels.len())
            .map(|i| Sample {
                pixels: &self.pixels[i],
                tokens: &self.tokens[i],
                attributes: &self.attrs[i],
            })
            .collect()
    }

    /// Loss value (`None` = combined loss, `Some(k)` = component k) at the current parameters.
    pub fn loss(&self, plan: &BatchPlan, objective: &Objective, which: Option<usize>) -> f64 {
        let g = Graph::new();
        let p = self.model.bind_frozen(&g);
        let out = forward_losses(&self.model, &p, &self.batch(), &self.prompts, plan, objective).unwrap();
        match which {
            None => out.total.item(),
            Some(k) => out.components[k].item(),
        }
    }

    pub fn grads(&self, plan: &BatchPlan, objective: &Objective, which: Option<usize>) -> Vec<Tensor<f64>> {
        let g = Graph::new();
        let p = self.model.bind(&g);
        let out = forward_losses(&self.model, &p, &self.batch(), &self.prompts, plan, objective).unwrap();
        let root = match which {
            None => out.total,
            Some(k) => out.components[k].clone(),
        };
        root.backward().unwrap();
        p.grads()
    }

    /// Plan with hard negatives frozen at their current values, so the loss is smooth.
    pub fn frozen_plan(&self, seed: u64, objective: &Objective) -> BatchPlan {
        let mut plan = self.plan(seed, 0);
        let g = Graph::new();
        let p = self.model.bind_frozen(&g);
        let out = forward_losses(&self.model, &p, &self.batch(), &self.prompts, &plan, objective).unwrap();
        plan.negatives = out.negatives;
        plan
    }
}

/// Step of the fourth-order central stencil.
pub const FD_STEP: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero and are compared absolutely.
pub const GRAD_TINY: f64 = 1e-8;
pub const GRAD_ABS_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

fn coordinates(store: &ParamStore<f64>, grads: &[Tensor<f64>], per_tensor: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let data = g.data();
        if data.iter().all(|&x| x == 0.0) || store.tensors()[i].is_empty() {
            continue;
        }
        let top = (0..data.len()).max_by(|&a, &b| data[a].abs().total_cmp(&data[b].abs())).unwrap();
        out.push((i, top));
        for _ in 1..per_tensor {
            out.push((i, rng.below(data.len())));
        }
    }
    out
}

/// Five-point central differences on up to `per_tensor` coordinates of every parameter
/// tensor with a nonzero gradient (always including its largest entry).
pub fn gradcheck(fx: &mut Fixture, objective: &Objective, which: Option<usize>, per_tensor: usize) -> GradCheck {
    let plan = fx.frozen_plan(7, objective);
    let grads = fx.grads(&plan, objective, which);
    let mut rng = RngStream::new(5, 5);
    let coords = coordinates(fx.model.params(), &grads, per_tensor, &mut rng);
    let mut report = GradCheck {
        checked: 0,
        max_rel: 0.0,
        failures: Vec::new(),
    };
    let names: Vec<String> = fx.model.params().names().to_vec();
    for (i, j) in coords {
        let orig = fx.model.params().tensors()[i].data()[j];
        let mut at = |offset: f64| {
            fx.model.params_mut().tensors_mut()[i].data_mut()[j] = orig + offset;
            fx.loss(&plan, objective, which)
        };
        let h = FD_STEP;
        let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
        fx.model.params_mut().tensors_mut()[i].data_mut()[j] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let analytic = grads[i].data()[j];
        let scale = analytic.abs().max(numeric.abs());
        report.checked += 1;
        let ok = if scale < GRAD_TINY {
            (analytic - numeric).abs() < GRAD_ABS_TOL
        } else {
            let rel = (analytic - numeric).abs() / scale;
            report.max_rel = report.max_rel.max(rel);
            rel < GRAD_REL_TOL
        };
        if !ok {
            report
                .failures
                .push(format!("{}[{j}]: analytic {analytic:e} numeric {numeric:e}", names[i]));
        }
    }
    report
}

pub const LOSS_NAMES: [&str; 6] = ["itc", "itm", "mlm", "iac", "iam", "mam"];

/// `n` random unit vectors of length `d`.
pub fn unit_rows(rng: &mut RngStream, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn var(g: &Graph<f64>, rows: &[Vec<f64>]) -> Var<f64> {
    let d = rows[0].len();
    g.constant_from(&[rows.len(), d], rows.concat()).unwrap()
}
