//! 1-d convolutional baseline over depth.
//!
//! Input channels: the eight normalized neighbour profiles, then lon, lat and
//! SST of the target and each neighbour held constant over depth. Three
//! conv(3)/ReLU/max-pool(2) stages, a hidden fully connected layer and a
//! zero-initialized output layer regress the perturbation of the neighbour mean.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Sample, SoundSpeedProfile};
use crate::diffcore::{conv1d, linear, max_pool_rows2, Bound, Checkpoint, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::evaluation::{rmse_eq33, Estimator};
use crate::exec::Execution;
use crate::ingest::{apply_norm, normalize_stats, NormStats, NormalizedSample};
use crate::training::model::{meta_parse, push_stats, read_stats};
use crate::training::{recon_rmse, AdamW, LrSchedule};

pub const CNN_KERNEL: usize = 3;
pub const CNN_BASE_CHANNELS: [usize; 3] = [64, 128, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub depth_count: usize,
    pub n_refs: usize,
    pub channel_div: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl CnnConfig {
    pub fn desk() -> Self {
        CnnConfig {
            depth_count: 64,
            n_refs: 8,
            channel_div: 8,
            hidden: 64,
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            lr_min: 1e-7,
            warmup_epochs: 2,
            weight_decay: 1e-3,
            seed: 7,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.n_refs + 3 * (self.n_refs + 1)
    }

    pub fn channels(&self) -> Result<[usize; 3]> {
        let div = self.channel_div.max(1);
        let c = CNN_BASE_CHANNELS.map(|c| c / div);
        if c.contains(&0) {
            return Err(Error::Config(format!("channel divisor {div} leaves an empty layer")));
        }
        Ok(c)
    }

    /// Profile length after the three pools.
    pub fn pooled_len(&self) -> Result<usize> {
        if self.depth_count < 8 {
            return Err(Error::shape(format!(
                "profile of {} depths is too short for three pooling stages",
                self.depth_count
            )));
        }
        Ok(self.depth_count / 2 / 2 / 2)
    }
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    pub cfg: CnnConfig,
    pub params: ParameterStore,
    pub stats: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnOutcome {
    /// `(epoch, mean training loss, test rmse_eq33)`.
    pub metrics: Vec<(usize, f64, f64)>,
    pub initial_rmse: f64,
}

impl CnnModel {
    pub fn new(cfg: CnnConfig, stats: NormStats) -> Result<Self> {
        let [c1, c2, c3] = cfg.channels()?;
        let pooled = cfg.pooled_len()?;
        if stats.depth_count() != cfg.depth_count {
            return Err(Error::shape("normalization and CNN depth counts differ"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParameterStore::new();
        let k = CNN_KERNEL;
        let ci = cfg.in_channels();
        ps.add_uniform("cnn.conv1.w", &[k * ci, c1], k * ci, &mut rng)?;
        ps.add_uniform("cnn.conv1.b", &[c1], k * ci, &mut rng)?;
        ps.add_uniform("cnn.conv2.w", &[k * c1, c2], k * c1, &mut rng)?;
        ps.add_uniform("cnn.conv2.b", &[c2], k * c1, &mut rng)?;
        ps.add_uniform("cnn.conv3.w", &[k * c2, c3], k * c2, &mut rng)?;
        ps.add_uniform("cnn.conv3.b", &[c3], k * c2, &mut rng)?;
        ps.add_linear("cnn.fc1", pooled * c3, cfg.hidden, &mut rng)?;
        ps.add_linear_zero("cnn.fc2", cfg.hidden, cfg.depth_count)?;
        Ok(CnnModel { cfg, params: ps, stats })
    }

    pub fn inputs(&self, s: &NormalizedSample) -> Result<Vec<f64>> {
        let (d, n) = (self.cfg.depth_count, self.cfg.n_refs);
        if s.depth_count != d || s.n_refs != n {
            return Err(Error::shape(format!(
                "CNN built for D={d} N={n}, sample has D={} N={}",
                s.depth_count, s.n_refs
            )));
        }
        let mut labels = Vec::with_capacity(3 * (n + 1));
        labels.extend([s.target_coord[0], s.target_coord[1], s.target_sst]);
        for r in 0..n {
            labels.extend([s.ref_coords[r][0], s.ref_coords[r][1], s.ref_ssts[r]]);
        }
        let ci = self.cfg.in_channels();
        let mut x = Vec::with_capacity(d * ci);
        for k in 0..d {
            for r in 0..n {
                x.push(s.ref_profiles[r * d + k]);
            }
            x.extend_from_slice(&labels);
        }
        Ok(x)
    }

    /// Feature map after each stage, then the normalized perturbation `[1, D]`.
    pub fn forward_trace<'t>(&self, tape: &'t Tape, b: &Bound<'t>, s: &NormalizedSample) -> Result<Vec<Var<'t>>> {
        let mut x = tape.constant(self.inputs(s)?, &[self.cfg.depth_count, self.cfg.in_channels()]);
        let mut trace = Vec::with_capacity(4);
        for l in 1..=3 {
            let w = b.get(&format!("cnn.conv{l}.w"))?;
            let bias = b.get(&format!("cnn.conv{l}.b"))?;
            x = max_pool_rows2(conv1d(x, w, bias, CNN_KERNEL)?.relu())?;
            trace.push(x);
        }
        let flat = x.reshape(&[1, x.len()]);
        let (w1, b1) = b.linear("cnn.fc1")?;
        let (w2, b2) = b.linear("cnn.fc2")?;
        trace.push(linear(linear(flat, w1, b1)?.relu(), w2, b2)?);
        Ok(trace)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, b: &Bound<'t>, s: &NormalizedSample) -> Result<Var<'t>> {
        Ok(*self.forward_trace(tape, b, s)?.last().unwrap())
    }

    pub fn generate(&self, s: &NormalizedSample) -> Result<SoundSpeedProfile> {
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let delta = self.forward(&tape, &b, s)?;
        tape.check_finite()?;
        let delta = self.stats.denorm_perturbation(&delta.value());
        let speeds = s.physical_ref_mean.speeds().iter().zip(&delta).map(|(m, d)| m + d).collect();
        SoundSpeedProfile::new(speeds)
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        let c = &self.cfg;
        let mut ck = Checkpoint::new();
        ck.push_meta("model", "cnn");
        ck.push_meta("epoch", epoch);
        ck.push_meta("depth_count", c.depth_count);
        ck.push_meta("n_refs", c.n_refs);
        ck.push_meta("channel_div", c.channel_div);
        ck.push_meta("hidden", c.hidden);
        ck.push_store(&self.params);
        push_stats(&mut ck, &self.stats);
        ck
    }

    pub fn save(&self, stem: &Path, epoch: usize) -> Result<()> {
        self.checkpoint(epoch).save(stem)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let ck = Checkpoint::load(stem)?;
        if ck.meta("model") != Some("cnn") {
            return Err(Error::Contract("checkpoint does not hold a CNN baseline".into()));
        }
        let cfg = CnnConfig {
            depth_count: meta_parse(&ck, "depth_count")?,
            n_refs: meta_parse(&ck, "n_refs")?,
            channel_div: meta_parse(&ck, "channel_div")?,
            hidden: meta_parse(&ck, "hidden")?,
            ..CnnConfig::desk()
        };
        let mut m = CnnModel::new(cfg, read_stats(&ck)?)?;
        ck.restore_into(&mut m.params)?;
        Ok(m)
    }
}

impl Estimator for CnnModel {
    fn name(&self) -> &str {
        "CNN"
    }

    fn estimate(&self, s: &Sample) -> Result<SoundSpeedProfile> {
        self.generate(&apply_norm(s, &self.stats)?)
    }

    fn n_params(&self) -> usize {
        self.params.n_values()
    }
}

/// The CNN loss on one batch: mean per-sample RMSE in m/s.
pub fn cnn_loss<'t>(model: &CnnModel, tape: &'t Tape, b: &Bound<'t>, batch: &[&NormalizedSample]) -> Result<Var<'t>> {
    let d = model.cfg.depth_count;
    let std = tape.constant(model.stats.speed_std.clone(), &[1, d]);
    let mut errs = Vec::with_capacity(batch.len());
    for s in batch {
        let target = s
            .target_profile
            .as_ref()
            .ok_or_else(|| Error::Contract("training sample without a target profile".into()))?;
        let delta = model.forward(tape, b, s)?;
        let resid = tape.constant(target.iter().zip(&s.ref_mean).map(|(t, m)| t - m).collect(), &[1, d]);
        errs.push((delta - resid) * std);
    }
    if errs.is_empty() {
        return Err(Error::EmptyDataset("empty CNN batch".into()));
    }
    Ok(recon_rmse(Var::concat_rows(&errs)))
}

fn test_rmse(model: &CnnModel, test: &[NormalizedSample], truths: &[SoundSpeedProfile], exec: Execution) -> Result<f64> {
    let preds = exec.map(test, |s| model.generate(s)).into_iter().collect::<Result<Vec<_>>>()?;
    rmse_eq33(&preds, truths)
}

/// Train the baseline; writes `cnn_metrics.csv` and `cnn_best.*` into `out_dir` if given.
pub fn cnn_train(train: &[Sample], test: &[Sample], cfg: &CnnConfig, exec: Execution, out_dir: Option<&Path>) -> Result<(CnnModel, CnnOutcome)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySplit);
    }
    let stats = normalize_stats(train)?;
    let mut model = CnnModel::new(cfg.clone(), stats)?;
    let train_n = train.iter().map(|s| apply_norm(s, &model.stats)).collect::<Result<Vec<_>>>()?;
    let test_n = test.iter().map(|s| apply_norm(s, &model.stats)).collect::<Result<Vec<_>>>()?;
    let truths = test.iter().map(|s| s.truth().cloned()).collect::<Result<Vec<_>>>()?;
    let sched = LrSchedule::new(cfg.lr, cfg.lr_min, cfg.warmup_epochs as f64, cfg.epochs as f64)?;
    let opt = AdamW::new(cfg.weight_decay);
    let n_batches = train_n.len().div_ceil(cfg.batch_size.max(1));
    let mut order: Vec<usize> = (0..train_n.len()).collect();
    let mut outcome = CnnOutcome {
        metrics: Vec::new(),
        initial_rmse: test_rmse(&model, &test_n, &truths, exec)?,
    };
    let mut best = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC11);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<&NormalizedSample> = chunk.iter().map(|&i| &train_n[i]).collect();
            let tape = Tape::new();
            let b = model.params.bind(&tape, true);
            let loss = cnn_loss(&model, &tape, &b, &batch)?;
            tape.check_finite()?;
            model.params.zero_grad();
            model.params.accumulate_grad(&tape, loss, &b)?;
            let t = epoch as f64 + (bi + 1) as f64 / n_batches as f64;
            opt.step(&mut model.params, sched.at(t.min(cfg.epochs as f64))?)?;
            total += loss.item();
        }
        let r = test_rmse(&model, &test_n, &truths, exec)?;
        outcome.metrics.push((epoch + 1, total / n_batches as f64, r));
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if r < best {
                model.save(&dir.join("cnn_best"), epoch + 1)?;
            }
        }
        best = best.min(r);
    }
    if let Some(dir) = out_dir {
        let mut csv = String::from("epoch,loss,test_rmse\n");
        for (e, l, r) in &outcome.metrics {
            csv.push_str(&format!("{e},{l},{r}\n"));
        }
        let p = dir.join("cnn_metrics.csv");
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
        model.save(&dir.join(format!("cnn_{:04}", cfg.epochs)), cfg.epochs)?;
    }
    Ok((model, outcome))
}
