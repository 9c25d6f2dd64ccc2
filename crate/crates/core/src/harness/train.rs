use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{OptimizerSection, RunConfig};
use super::model::Model;
use super::Dataset;
use crate::data::{pixel_to_grid, ImageCache, PairSampler, Side};
use crate::detmath::{assign_targets, bce_pair_loss, total_detection_loss, AnchorPrior};
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, sgd_step, Graph, Tensor, Var};

/// RNG streams derived from the run seed.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_TRAIN: u64 = 1;
pub(crate) const STREAM_EVAL: u64 = 2;
pub(crate) const STREAM_LOCALIZE: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean loss of every epoch run by this call.
    pub epoch_losses: Vec<f64>,
    /// Epochs completed, counting any resumed from.
    pub epochs: usize,
    pub checkpoint: PathBuf,
}

/// Fresh model from the config's seed.
pub fn init_model(cfg: &RunConfig) -> Result<Model> {
    Model::build(&cfg.model_spec()?, &mut stream_rng(cfg.run.seed, STREAM_INIT))
}

fn apply_gradients(
    model: &mut Model,
    g: &Graph,
    out: Var,
    seed: Tensor,
    opt: &OptimizerSection,
) -> Result<()> {
    let (grads, _) = g.backward(model.shared_parameters(), out, seed)?;
    let params = model.net_mut().params_mut();
    params.accumulate(&grads)?;
    if opt.clip_norm > 0.0 {
        clip_grad_norm(params, opt.clip_norm);
    }
    sgd_step(params, opt.lr, opt.momentum)
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    sampler: PairSampler<'a>,
    cache: ImageCache,
    train_classes: BTreeSet<&'a str>,
    priors: Vec<AnchorPrior>,
}

impl Trainer<'_> {
    fn check_class(&self, class: &str) -> Result<()> {
        if !self.train_classes.contains(class) {
            return Err(Error::Training(format!(
                "class '{class}' is not on the training side of the split"
            )));
        }
        Ok(())
    }

    fn recognition_step(&mut self, model: &mut Model) -> Result<f64> {
        let batch = self.sampler.sample_recognition_batch(self.cfg.optimizer.batch_size)?;
        let (qs, ts) = model.input_sizes();
        let m = &self.data.manifest;
        let (mut q, mut t, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for p in &batch {
            self.check_class(&p.query_class)?;
            self.check_class(&p.target_class)?;
            q.push(self.cache.instance(m, p.query, qs)?);
            t.push(self.cache.instance(m, p.target, ts)?);
            y.push(p.label());
        }
        let mut g = Graph::new();
        let out = model.forward_graph(&mut g, Tensor::stack(&q)?, Tensor::stack(&t)?)?;
        let (loss, grad) = bce_pair_loss(g.value(out).data(), &y)?;
        let seed = Tensor::new(g.value(out).shape().to_vec(), grad)?;
        apply_gradients(model, &g, out, seed, &self.cfg.optimizer)?;
        Ok(loss)
    }

    fn detection_step(&mut self, model: &mut Model) -> Result<f64> {
        let Model::Detector(det) = &*model else {
            return Err(Error::Training("detection step needs a detector".into()));
        };
        let grid = det.spec.grid;
        let (qs, ts) = model.input_sizes();
        let m = &self.data.manifest;
        let (mut q, mut t, mut assignments) = (Vec::new(), Vec::new(), Vec::new());
        for s in self.sampler.sample_detection_batch(self.cfg.optimizer.batch_size)? {
            self.check_class(&s.query_class)?;
            self.check_class(&s.target_class)?;
            q.push(self.cache.instance(m, s.query, qs)?);
            t.push(self.cache.image(m, s.target, ts)?);
            let e = &m.entries[s.target];
            let gts: Vec<_> =
                s.gts.iter().map(|r| pixel_to_grid(r, e.width, e.height, grid)).collect();
            assignments.push(assign_targets(&gts, &self.priors, grid)?);
        }
        let mut g = Graph::new();
        let out = model.forward_graph(&mut g, Tensor::stack(&q)?, Tensor::stack(&t)?)?;
        let loss = total_detection_loss(g.value(out), &assignments, &self.priors, &self.cfg.loss)?;
        apply_gradients(model, &g, out, loss.grad, &self.cfg.optimizer)?;
        Ok(loss.total)
    }
}

/// Runs the configured number of epochs, logging the mean loss of each to
/// `out_dir/loss.log` and writing `out_dir/checkpoint.bin` on the configured
/// interval and at the end. `resume` continues from a checkpoint's epoch,
/// parameters, momentum and sampler state.
pub fn train(cfg: &RunConfig, data: &Dataset, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let digest = cfg.digest()?;
    let (mut model, rng, start) = match resume {
        Some(ck) => {
            ck.check_digest(&digest)?;
            (ck.to_model()?, ck.header.rng.restore()?, ck.header.epoch)
        }
        None => (init_model(cfg)?, stream_rng(cfg.run.seed, STREAM_TRAIN), 0),
    };
    if model.task() != cfg.run.task {
        return Err(Error::Config(format!(
            "config task is {} but the model is for {}",
            cfg.run.task,
            model.task()
        )));
    }
    let opt = &cfg.optimizer;
    let sampler = PairSampler::new(&data.manifest, &data.split, Side::Train, rng);
    let mut trainer = Trainer {
        cfg,
        data,
        sampler,
        cache: ImageCache::new(),
        train_classes: data.split.train.iter().map(String::as_str).collect(),
        priors: cfg.priors()?,
    };
    let batches = if opt.batches_per_epoch > 0 {
        opt.batches_per_epoch
    } else {
        data.instances(Side::Train).div_ceil(opt.batch_size).max(1)
    };

    fs::create_dir_all(&cfg.run.out_dir)?;
    let ckpt_path = cfg.run.out_dir.join("checkpoint.bin");
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(cfg.run.out_dir.join("loss.log"))?;

    let mut losses = Vec::new();
    for epoch in start..opt.epochs {
        let mut total = 0.0;
        for b in 0..batches {
            let step = match cfg.run.task {
                super::Task::Recognition => trainer.recognition_step(&mut model),
                super::Task::Detection => trainer.detection_step(&mut model),
            };
            let loss = step.map_err(|e| {
                Error::Training(format!("epoch {}, batch {}: {e}", epoch + 1, b + 1))
            })?;
            total += loss;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("epoch {}: mean loss is {mean}", epoch + 1)));
        }
        losses.push(mean);
        writeln!(log, "{} {mean:.17e}", epoch + 1)?;
        log::info!("epoch {}/{} loss {mean:.6}", epoch + 1, opt.epochs);
        let done = epoch + 1;
        if opt.checkpoint_every > 0 && done % opt.checkpoint_every == 0 && done < opt.epochs {
            save_checkpoint(&ckpt_path, &model, &digest, done, trainer.sampler.rng())?;
        }
    }
    let epochs = opt.epochs.max(start);
    save_checkpoint(&ckpt_path, &model, &digest, epochs, trainer.sampler.rng())?;
    Ok(TrainOutcome {
        model,
        epoch_losses: losses,
        epochs,
        checkpoint: ckpt_path,
    })
}
