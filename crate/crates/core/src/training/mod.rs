//! Losses, the alternating optimization loop and model bundles.

mod bundle;
mod loss;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use bundle::ModelBundle;
pub use loss::{
    discriminator_loss, discriminator_loss_graph, generator_loss, generator_loss_graph, kl_divergence,
    GeneratorLossTerms, LossVariant, KL_EPSILON,
};

use crate::error::{Error, Result};
use crate::model::{
    build_step_plan, discriminator_forward, generator_forward, init_params, ColumnOutput, EmbeddingGrad,
    ModelConfig, StepPlan,
};
use crate::neural::{clip_global_norm, AdamConfig, AdamState, Gradients, Graph, ParamStore, Tensor};
use crate::schema::Table;
use crate::transform::{fit_transformer, Layout, Slot, TransformOptions, Transformer, DEFAULT_GAMMA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// First-moment decay of both Adam optimizers.
    pub adam_beta1: f64,
    /// Denominator offset of both Adam optimizers.
    pub adam_eps: f64,
    /// L2 penalty coefficient on every weight; adds `weight_decay * w` to each gradient.
    pub weight_decay: f64,
    /// Discriminator updates per generator update.
    pub steps_ratio: usize,
    pub m: usize,
    pub gamma: f64,
    pub n_z: usize,
    pub n_h: usize,
    pub n_f: usize,
    pub disc_layers: usize,
    pub disc_width: usize,
    pub diversity_b: usize,
    pub diversity_c: usize,
    pub seed: u64,
    pub kl_epsilon: f64,
    pub loss_variant: LossVariant,
    /// Add the marginal-matching KL terms to the generator loss.
    pub kl_terms: bool,
    /// Global gradient-norm cap applied to both networks.
    pub clip_norm: f64,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            batch_size: 200,
            epochs: 100,
            lr_g: 2e-4,
            lr_d: 2e-4,
            adam_beta1: 0.5,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            steps_ratio: 1,
            m: 5,
            gamma: DEFAULT_GAMMA,
            n_z: model.n_z,
            n_h: model.n_h,
            n_f: model.n_f,
            disc_layers: model.disc_layers,
            disc_width: model.disc_width,
            diversity_b: model.diversity_b,
            diversity_c: model.diversity_c,
            seed: 0,
            kl_epsilon: KL_EPSILON,
            loss_variant: LossVariant::StableStandard,
            kl_terms: true,
            clip_norm: 10.0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            n_z: self.n_z,
            n_h: self.n_h,
            n_f: self.n_f,
            disc_layers: self.disc_layers,
            disc_width: self.disc_width,
            diversity_b: self.diversity_b,
            diversity_c: self.diversity_c,
        }
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            eps: self.adam_eps,
            ..AdamConfig::default()
        }
    }

    pub fn transform_options(&self) -> TransformOptions {
        TransformOptions {
            m: self.m,
            gamma: self.gamma,
            ..TransformOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("steps_ratio", self.steps_ratio),
            ("m", self.m),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("kl_epsilon", self.kl_epsilon),
            ("clip_norm", self.clip_norm),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad(format!("adam_beta1 must lie in [0, 1), got {}", self.adam_beta1));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        self.model().validate()
    }
}

/// Losses and gradient norms of one generator update and the discriminator
/// updates preceding it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub adversarial: f64,
    /// Per-column KL terms in schema order (continuous `u`, discrete `d`).
    pub kl: Vec<f64>,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn is_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [r.loss_g, r.loss_d, r.adversarial, r.grad_norm_g, r.grad_norm_d]
                .iter()
                .chain(&r.kl)
                .all(|x| x.is_finite())
        })
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Per-epoch progress passed to the training callback.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub epochs: usize,
    pub mean_loss_g: f64,
    pub mean_loss_d: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Trains without checkpoints or progress reporting.
pub fn train(table: &Table, config: &TrainConfig) -> Result<(ModelBundle, TrainHistory)> {
    train_with(table, config, None, |_| {})
}

/// Trains, writing a bundle to `checkpoint` every `checkpoint_every` epochs.
/// A non-finite loss or gradient aborts with the last checkpoint written.
pub fn train_with(
    table: &Table,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<(ModelBundle, TrainHistory)> {
    config.validate()?;
    if table.n_rows() < config.batch_size {
        return Err(Error::TooFewRows {
            needed: config.batch_size,
            got: table.n_rows(),
        });
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let transform_seed: u64 = seeds.random();
    let init_seed: u64 = seeds.random();
    let encode_seed: u64 = seeds.random();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.random());

    let transformer = fit_transformer(table, config.transform_options(), transform_seed)?;
    let model = config.model();
    let plan = build_step_plan(&transformer.schema, config.m);
    let all = init_params(&transformer.schema, config.m, &model, init_seed)?;
    let mut net = Networks {
        gen: all.subset("gen/"),
        disc: all.subset("disc/"),
        adam_g: AdamState::new(config.adam(config.lr_g)),
        adam_d: AdamState::new(config.adam(config.lr_d)),
    };

    let n = table.n_rows();
    let batches = n / config.batch_size;
    let dim = transformer.dim();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    let mut last_checkpoint: Option<PathBuf> = None;

    for epoch in 0..config.epochs {
        let encoded = transformer.transform_table(table, encode_seed.wrapping_add(epoch as u64))?;
        order.shuffle(&mut rng);
        let (mut sum_g, mut sum_d) = (0.0, 0.0);
        for step in 0..batches {
            let idx = &order[step * config.batch_size..(step + 1) * config.batch_size];
            let mut real = Vec::with_capacity(idx.len() * dim);
            for &r in idx {
                real.extend_from_slice(encoded.flat.row_slice(r));
            }
            let real = Tensor::matrix(idx.len(), dim, real);
            let ctx = StepContext {
                config,
                model: &model,
                plan: &plan,
                layout: &transformer.layout,
            };
            let record = net
                .step(&ctx, &real, &mut rng, epoch, step)
                .map_err(|e| match e {
                    Error::NonFinite(_) | Error::NonFiniteGradient(_) => Error::NonFiniteLoss {
                        epoch,
                        step,
                        checkpoint: last_checkpoint.clone(),
                    },
                    other => other,
                })?;
            sum_g += record.loss_g;
            sum_d += record.loss_d;
            history.records.push(record);
        }
        let mut written = None;
        if let Some(path) = checkpoint {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                net.bundle(config, &transformer).save(path)?;
                last_checkpoint = Some(path.to_path_buf());
                written = last_checkpoint.clone();
            }
        }
        on_epoch(&EpochSummary {
            epoch: epoch + 1,
            epochs: config.epochs,
            mean_loss_g: sum_g / batches as f64,
            mean_loss_d: sum_d / batches as f64,
            checkpoint: written,
        });
    }
    Ok((net.bundle(config, &transformer), history))
}

struct Networks {
    gen: ParamStore,
    disc: ParamStore,
    adam_g: AdamState,
    adam_d: AdamState,
}

struct StepContext<'a> {
    config: &'a TrainConfig,
    model: &'a ModelConfig,
    plan: &'a StepPlan,
    layout: &'a Layout,
}

fn add_weight_decay(grads: &mut Gradients, params: &ParamStore, coef: f64) {
    if coef == 0.0 {
        return;
    }
    for (name, grad) in grads.iter_mut() {
        if let Some(w) = params.get(name) {
            for (g, x) in grad.data_mut().iter_mut().zip(w.data()) {
                *g += coef * x;
            }
        }
    }
}

fn noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Batch means of each column's `u` or `d` block, in schema order.
pub fn real_marginals(flat: &Tensor, layout: &Layout) -> Vec<Vec<f64>> {
    let rows = flat.rows().max(1) as f64;
    layout
        .slots
        .iter()
        .map(|slot| {
            let range = match slot {
                Slot::Continuous { u, .. } => u.clone(),
                Slot::Discrete { d } => d.clone(),
            };
            let mut mean = vec![0.0; range.len()];
            for r in 0..flat.rows() {
                for (m, x) in mean.iter_mut().zip(&flat.row_slice(r)[range.clone()]) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows);
            mean
        })
        .collect()
}

fn check_loss(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} is {x}")))
    }
}

impl Networks {
    fn bundle(&self, config: &TrainConfig, transformer: &Transformer) -> ModelBundle {
        let mut params = self.gen.clone();
        params.merge(&self.disc);
        ModelBundle {
            config: config.clone(),
            transformer: transformer.clone(),
            params,
        }
    }

    fn disc_step(&mut self, ctx: &StepContext, real: &Tensor, fake: Tensor) -> Result<(f64, f64)> {
        let cfg = ctx.config;
        let mut g = Graph::new();
        let disc = self.disc.bind(&mut g, true);
        let real_v = g.constant(real.clone());
        let fake_v = g.constant(fake);
        let real_logits = discriminator_forward(&mut g, &disc, ctx.model, real_v)?;
        let fake_logits = discriminator_forward(&mut g, &disc, ctx.model, fake_v)?;
        let loss = discriminator_loss_graph(&mut g, real_logits, fake_logits, cfg.loss_variant)?;
        let loss_d = check_loss(g.value(loss).item(), "discriminator loss")?;
        g.backward(loss)?;
        let mut grads = disc.gradients(&g);
        add_weight_decay(&mut grads, &self.disc, cfg.weight_decay);
        let norm = check_loss(clip_global_norm(&mut grads, cfg.clip_norm), "discriminator gradient norm")?;
        self.adam_d.step(&mut self.disc, &grads)?;
        Ok((loss_d, norm))
    }

    /// `steps_ratio` discriminator updates, then one generator update. The
    /// last discriminator update scores the same fake batch the generator
    /// update differentiates, so one generator pass serves both.
    fn step(
        &mut self,
        ctx: &StepContext,
        real: &Tensor,
        rng: &mut ChaCha8Rng,
        epoch: usize,
        step: usize,
    ) -> Result<StepRecord> {
        let batch = real.rows();
        let cfg = ctx.config;
        for _ in 1..cfg.steps_ratio {
            let z = noise(batch, ctx.model.n_z, rng);
            let mut g = Graph::new();
            let gen = self.gen.bind(&mut g, false);
            let zv = g.constant(z);
            let fake = generator_forward(&mut g, &gen, ctx.plan, ctx.model, zv, EmbeddingGrad::StraightThrough)?;
            self.disc_step(ctx, real, g.value(fake.flat).clone())?;
        }

        let z = noise(batch, ctx.model.n_z, rng);
        let mut g = Graph::new();
        let gen = self.gen.bind(&mut g, true);
        let zv = g.constant(z);
        let fake = generator_forward(&mut g, &gen, ctx.plan, ctx.model, zv, EmbeddingGrad::StraightThrough)?;
        let (loss_d, grad_norm_d) = self.disc_step(ctx, real, g.value(fake.flat).clone())?;

        let disc = self.disc.bind(&mut g, false);
        let fake_logits = discriminator_forward(&mut g, &disc, ctx.model, fake.flat)?;
        let fake_marginals: Vec<_> = fake
            .columns
            .iter()
            .map(|c| match *c {
                ColumnOutput::Continuous { u, .. } => g.mean_rows(u),
                ColumnOutput::Discrete { d } => g.mean_rows(d),
            })
            .collect();
        let targets = real_marginals(real, ctx.layout);
        let terms = generator_loss_graph(&mut g, fake_logits, &fake_marginals, &targets, cfg.kl_epsilon, cfg.kl_terms)?;
        let loss_g = check_loss(g.value(terms.total).item(), "generator loss")?;
        g.backward(terms.total)?;
        let mut grads = gen.gradients(&g);
        add_weight_decay(&mut grads, &self.gen, cfg.weight_decay);
        let grad_norm_g = check_loss(clip_global_norm(&mut grads, cfg.clip_norm), "generator gradient norm")?;
        self.adam_g.step(&mut self.gen, &grads)?;

        Ok(StepRecord {
            epoch,
            step,
            loss_g,
            loss_d,
            adversarial: g.value(terms.adversarial).item(),
            kl: terms.kl.iter().map(|&k| g.value(k).item()).collect(),
            grad_norm_g,
            grad_norm_d,
        })
    }
}
