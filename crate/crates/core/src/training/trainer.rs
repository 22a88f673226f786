use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{discriminator_loss, gradient_penalty, generator_loss, stack_scores, LossWeights};
use super::model::Ragan;
use super::optim::AdamW;
use super::schedule::LrSchedule;
use crate::datamodel::{Sample, SoundSpeedProfile};
use crate::diffcore::{Dropout, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::evaluation::rmse_eq33;
use crate::exec::Execution;
use crate::generator::GeneratorConfig;
use crate::ingest::{apply_norm, normalize_stats, NormalizedSample};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub warmup_epochs: usize,
    pub stage1_epochs: usize,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub ckpt_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 30,
            lr_g: 4e-4,
            lr_d: 5e-4,
            warmup_epochs: 20,
            stage1_epochs: 20,
            lr_min: 1e-7,
            weight_decay: 1e-3,
            weights: LossWeights::default(),
            ckpt_every: 5,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        let w = &self.weights;
        let rates = [self.lr_g, self.lr_d, self.lr_min];
        if rates.iter().any(|r| !(*r > 0.0)) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rates must be positive and weight decay non-negative".into()));
        }
        if [w.eta_recon, w.eta_r1, w.eta_r2, w.lambda_loc, w.lambda_sst].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule_g(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr_g, self.lr_min, self.warmup_epochs as f64, self.epochs as f64)
    }

    pub fn schedule_d(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr_d, self.lr_min, self.warmup_epochs as f64, self.epochs as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Zero-based.
    pub epoch: usize,
    pub batch: usize,
    pub stage: u8,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// One-based.
    pub epoch: usize,
    pub stage: u8,
    pub lr_g: f64,
    pub lr_d: f64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub r1: f64,
    pub r2: f64,
    pub test_rmse: f64,
}

pub const METRICS_HEADER: &str = "epoch,stage,lr_g,lr_d,L_G,L_D,R1,R2,test_rmse";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.stage, r.lr_g, r.lr_d, r.loss_g, r.loss_d, r.r1, r.r2, r.test_rmse
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    /// Test rmse_eq33 before any update.
    pub initial_rmse: f64,
    pub best_epoch: usize,
    pub best_rmse: f64,
    pub checkpoints: Vec<PathBuf>,
}

/// Called after every optimizer step with the updated model.
pub type StepObserver<'a> = dyn FnMut(&StepInfo, &Ragan) + 'a;

/// Where and how a run reports.
#[derive(Default)]
pub struct TrainRun<'a> {
    pub out_dir: Option<&'a Path>,
    pub exec: Execution,
    pub observer: Option<&'a mut StepObserver<'a>>,
}


/// A sample in both representations.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub norm: NormalizedSample,
    pub truth: SoundSpeedProfile,
}

pub fn prepare(samples: &[Sample], model: &Ragan) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                norm: apply_norm(s, &model.stats)?,
                truth: s.truth()?.clone(),
            })
        })
        .collect()
}

/// Test-split rmse_eq33 of the generator in eval mode.
pub fn evaluate_rmse(model: &Ragan, test: &[Prepared], exec: Execution) -> Result<f64> {
    let preds = exec.map(test, |p| model.gen.generate(&p.norm, &model.stats));
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    let truths: Vec<SoundSpeedProfile> = test.iter().map(|p| p.truth.clone()).collect();
    rmse_eq33(&preds, &truths)
}

fn target(p: &Prepared) -> Result<&[f64]> {
    p.norm
        .target_profile
        .as_deref()
        .ok_or_else(|| Error::Contract("training sample without a target profile".into()))
}

fn dropout_mode(rate: f64, seed: u64, step: u64, kind: StepKind) -> Mode {
    let salt = match kind {
        StepKind::Generator => 0x47,
        StepKind::Discriminator => 0x44,
    };
    Mode::Train(Dropout::new(rate, seed ^ (step << 8) ^ salt))
}

#[derive(Debug, Default, Clone, Copy)]
struct DStats {
    loss: f64,
    r1: f64,
    r2: f64,
}

fn disc_step(model: &mut Ragan, batch: &[&Prepared], w: &LossWeights, opt: &AdamW, lr: f64, mut mode: Mode) -> Result<DStats> {
    let d = model.gen.cfg.depth_count;
    let tape = Tape::new();
    let gb = model.gen.params.bind(&tape, false);
    let db = model.disc.params.bind(&tape, true);
    let mut gen_mode = mode.clone();
    let (mut reals, mut fakes, mut lr_s, mut lf_s, mut loc_e, mut sst_e) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for p in batch {
        let delta = model.gen.forward(&tape, &gb, &p.norm, &mut gen_mode)?.delta;
        let fake_vals: Vec<f64> = delta.value().iter().zip(&p.norm.ref_mean).map(|(a, b)| a + b).collect();
        let real = tape.input(target(p)?.to_vec(), &[d]);
        let fake = tape.input(fake_vals, &[d]);
        let ctx = model.disc.context(&tape, &db, &p.norm)?;
        let out_r = model.disc.forward(&db, real, &ctx, &mut mode)?;
        let out_f = model.disc.forward(&db, fake, &ctx, &mut mode)?;
        loc_e.push((out_r.pred_loc - tape.constant(p.norm.target_coord.to_vec(), &[1, 2])).square().mean());
        sst_e.push((out_r.pred_sst - tape.constant(vec![p.norm.target_sst], &[1])).square().mean());
        reals.push(real);
        fakes.push(fake);
        lr_s.push(out_r.realism);
        lf_s.push(out_f.realism);
    }
    let r1 = gradient_penalty(&tape, &reals, &lr_s)?;
    let r2 = gradient_penalty(&tape, &fakes, &lf_s)?;
    let loss = discriminator_loss(
        stack_scores(&lr_s)?,
        stack_scores(&lf_s)?,
        r1,
        r2,
        stack_scores(&loc_e)?.mean(),
        stack_scores(&sst_e)?.mean(),
        w,
    );
    tape.check_finite()?;
    model.disc.params.zero_grad();
    model.disc.params.accumulate_grad(&tape, loss, &db)?;
    opt.step(&mut model.disc.params, lr)?;
    Ok(DStats {
        loss: loss.item(),
        r1: r1.item(),
        r2: r2.item(),
    })
}

fn gen_step(model: &mut Ragan, batch: &[&Prepared], w: &LossWeights, opt: &AdamW, lr: f64, mut mode: Mode) -> Result<f64> {
    let d = model.gen.cfg.depth_count;
    let tape = Tape::new();
    let gb = model.gen.params.bind(&tape, true);
    let db = model.disc.params.bind(&tape, false);
    let std = tape.constant(model.stats.speed_std.clone(), &[1, d]);
    let (mut lr_s, mut lf_s, mut errs) = (vec![], vec![], vec![]);
    for p in batch {
        let delta = model.gen.forward(&tape, &gb, &p.norm, &mut mode)?.delta;
        let fake = delta + tape.constant(p.norm.ref_mean.clone(), &[1, d]);
        let real = tape.constant(target(p)?.to_vec(), &[1, d]);
        let ctx = model.disc.context(&tape, &db, &p.norm)?;
        let (r, f) = model.disc.score_pair(&db, real, fake, &ctx, &mut mode)?;
        // reconstruction error in m/s
        errs.push((fake - real) * std);
        lr_s.push(r);
        lf_s.push(f);
    }
    let loss = generator_loss(stack_scores(&lr_s)?, stack_scores(&lf_s)?, Var::concat_rows(&errs), w.eta_recon);
    tape.check_finite()?;
    model.gen.params.zero_grad();
    model.gen.params.accumulate_grad(&tape, loss, &gb)?;
    opt.step(&mut model.gen.params, lr)?;
    Ok(loss.item())
}

fn write_checkpoint(model: &Ragan, dir: &Path, name: &str, epoch: usize, written: &mut Vec<PathBuf>) -> Result<()> {
    let stem = dir.join(name);
    model.save(&stem, epoch)?;
    written.push(stem);
    Ok(())
}

/// Two-stage adversarial training.
///
/// Stage 1 (the first `stage1_epochs` epochs) updates only the generator,
/// scoring against the untouched discriminator. Stage 2 alternates one
/// discriminator step and one generator step per batch.
pub fn train(
    train: &[Sample],
    test: &[Sample],
    gcfg: &GeneratorConfig,
    cfg: &TrainConfig,
    run: TrainRun<'_>,
) -> Result<(Ragan, TrainOutcome)> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySplit);
    }
    let stats = normalize_stats(train)?;
    let mut model = Ragan::new(gcfg.clone(), stats, cfg.seed)?;
    let train_p = prepare(train, &model)?;
    let test_p = prepare(test, &model)?;
    let sched_g = cfg.schedule_g()?;
    let sched_d = cfg.schedule_d()?;
    let opt = AdamW::new(cfg.weight_decay);
    let mut observer = run.observer;
    if let Some(dir) = run.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let initial_rmse = evaluate_rmse(&model, &test_p, run.exec)?;
    let mut outcome = TrainOutcome {
        metrics: Vec::with_capacity(cfg.epochs),
        initial_rmse,
        best_epoch: 0,
        best_rmse: f64::INFINITY,
        checkpoints: Vec::new(),
    };
    let n_batches = train_p.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let stage = if epoch < cfg.stage1_epochs { 1 } else { 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let (mut sum_g, mut sum_d, mut sum_r1, mut sum_r2) = (0.0, 0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_p[i]).collect();
            let t = epoch as f64 + (bi + 1) as f64 / n_batches as f64;
            let lr_g = sched_g.at(t.min(cfg.epochs as f64))?;
            let lr_d = sched_d.at(t.min(cfg.epochs as f64))?;
            let numerical = |e: Error| match e {
                Error::Numerical(m) => Error::Numerical(format!(
                    "training diverged at epoch {} batch {bi}: {m}; last good checkpoint kept",
                    epoch + 1
                )),
                other => other,
            };
            if stage == 2 {
                let mode = dropout_mode(gcfg.dropout, cfg.seed, step, StepKind::Discriminator);
                let ds = disc_step(&mut model, &batch, &cfg.weights, &opt, lr_d, mode).map_err(numerical)?;
                sum_d += ds.loss;
                sum_r1 += ds.r1;
                sum_r2 += ds.r2;
                if let Some(obs) = observer.as_mut() {
                    obs(&StepInfo { epoch, batch: bi, stage, kind: StepKind::Discriminator }, &model);
                }
            }
            let mode = dropout_mode(gcfg.dropout, cfg.seed, step, StepKind::Generator);
            sum_g += gen_step(&mut model, &batch, &cfg.weights, &opt, lr_g, mode).map_err(numerical)?;
            if let Some(obs) = observer.as_mut() {
                obs(&StepInfo { epoch, batch: bi, stage, kind: StepKind::Generator }, &model);
            }
            step += 1;
        }

        let test_rmse = evaluate_rmse(&model, &test_p, run.exec)?;
        if !test_rmse.is_finite() {
            return Err(Error::Numerical(format!("test rmse is {test_rmse} after epoch {}", epoch + 1)));
        }
        let nb = n_batches as f64;
        let end = (epoch + 1) as f64;
        outcome.metrics.push(EpochMetrics {
            epoch: epoch + 1,
            stage,
            lr_g: sched_g.at(end)?,
            lr_d: if stage == 2 { sched_d.at(end)? } else { 0.0 },
            loss_g: sum_g / nb,
            loss_d: sum_d / nb,
            r1: sum_r1 / nb,
            r2: sum_r2 / nb,
            test_rmse,
        });
        if let Some(dir) = run.out_dir {
            fs::write(dir.join("metrics.csv"), metrics_csv(&outcome.metrics)).map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
            if (epoch + 1) % cfg.ckpt_every.max(1) == 0 || epoch + 1 == cfg.epochs {
                write_checkpoint(&model, dir, &format!("ckpt_{:04}", epoch + 1), epoch + 1, &mut outcome.checkpoints)?;
            }
            if test_rmse < outcome.best_rmse {
                write_checkpoint(&model, dir, "ckpt_best", epoch + 1, &mut outcome.checkpoints)?;
            }
        }
        if test_rmse < outcome.best_rmse {
            outcome.best_rmse = test_rmse;
            outcome.best_epoch = epoch + 1;
        }
    }
    Ok((model, outcome))
}
