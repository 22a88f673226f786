//! Run configuration: `key = value` files layered over presets.
//!
//! Resolution order is desk defaults, then `--preset`, then `--config`, then
//! individual command-line flags. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::{CnnConfig, IdwConfig};
use crate::datamodel::{GeoCoordinate, YearMonth};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::ingest::{MonthRange, SplitSpec, SynthSpec};
use crate::training::{LossWeights, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub depth_count: usize,
    pub d_r: usize,
    pub n_attn_layers: usize,
    pub dropout: f64,
    pub ffn_mult: usize,
    pub fmb_kernel: usize,

    pub batch_size: usize,
    pub epochs: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub warmup_epochs: usize,
    pub stage1_epochs: usize,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub eta_recon: f64,
    pub eta_r1: f64,
    pub eta_r2: f64,
    pub lambda_loc: f64,
    pub lambda_sst: f64,
    pub ckpt_every: usize,

    pub idw_power: f64,
    pub idw_zero_eps: f64,
    pub cnn_channel_div: usize,
    pub cnn_hidden: usize,
    pub cnn_epochs: usize,
    pub cnn_lr: f64,
    pub cnn_checkpoint: Option<PathBuf>,

    pub train_start: YearMonth,
    pub train_end: YearMonth,
    pub test_start: YearMonth,
    pub test_end: YearMonth,
    pub train_stride_deg: f64,
    pub test_offset_deg: f64,

    pub synth_n_lon: usize,
    pub synth_n_lat: usize,
    pub synth_months: usize,
    pub synth_start: YearMonth,
    pub synth_origin_lon: f64,
    pub synth_origin_lat: f64,

    pub eval_depths: Vec<f64>,
    pub report_timing: bool,

    pub workers: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

const fn ym(year: i32, month: u32) -> YearMonth {
    YearMonth { year, month }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub const PRESETS: [&str; 2] = ["desk", "paper"];

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            seed: 7,
            depth_count: 64,
            d_r: 32,
            n_attn_layers: 2,
            dropout: 0.05,
            ffn_mult: 2,
            fmb_kernel: 3,
            batch_size: 16,
            epochs: 30,
            lr_g: 4e-4,
            lr_d: 5e-4,
            warmup_epochs: 20,
            stage1_epochs: 20,
            lr_min: 1e-7,
            weight_decay: 1e-3,
            eta_recon: 10.0,
            eta_r1: 1.0,
            eta_r2: 1.0,
            lambda_loc: 0.1,
            lambda_sst: 0.1,
            ckpt_every: 5,
            idw_power: 2.0,
            idw_zero_eps: 1e-9,
            cnn_channel_div: 8,
            cnn_hidden: 64,
            cnn_epochs: 30,
            cnn_lr: 1e-3,
            cnn_checkpoint: None,
            train_start: ym(2022, 1),
            train_end: ym(2022, 9),
            test_start: ym(2022, 10),
            test_end: ym(2022, 12),
            train_stride_deg: 3.0,
            test_offset_deg: 1.0,
            synth_n_lon: 12,
            synth_n_lat: 12,
            synth_months: 12,
            synth_start: ym(2022, 1),
            synth_origin_lon: 0.5,
            synth_origin_lat: -59.5,
            eval_depths: vec![0.0, 16.0, 32.0, 63.0],
            report_timing: false,
            workers: 8,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }

    /// Full-scale settings: 1977 depths, width 384, batch 128, 196 epochs,
    /// the 2004-2020 / 2021-2023 split over a 39 x 21 one-degree box.
    pub fn paper() -> Self {
        RunConfig {
            depth_count: 1977,
            d_r: 384,
            batch_size: 128,
            epochs: 196,
            cnn_channel_div: 1,
            cnn_hidden: 512,
            cnn_epochs: 196,
            train_start: ym(2004, 1),
            train_end: ym(2020, 12),
            test_start: ym(2021, 1),
            test_end: ym(2023, 6),
            synth_n_lon: 39,
            synth_n_lat: 21,
            synth_months: 234,
            synth_start: ym(2004, 1),
            eval_depths: vec![200.0, 400.0, 1000.0, 1975.0],
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
        }
        let v = value.trim();
        match key {
            "seed" => self.seed = p(key, v)?,
            "depth_count" => self.depth_count = p(key, v)?,
            "d_r" => self.d_r = p(key, v)?,
            "n_attn_layers" => self.n_attn_layers = p(key, v)?,
            "dropout" => self.dropout = p(key, v)?,
            "ffn_mult" => self.ffn_mult = p(key, v)?,
            "fmb_kernel" => self.fmb_kernel = p(key, v)?,
            "batch_size" => self.batch_size = p(key, v)?,
            "epochs" => self.epochs = p(key, v)?,
            "lr_g" => self.lr_g = p(key, v)?,
            "lr_d" => self.lr_d = p(key, v)?,
            "warmup_epochs" => self.warmup_epochs = p(key, v)?,
            "stage1_epochs" => self.stage1_epochs = p(key, v)?,
            "lr_min" => self.lr_min = p(key, v)?,
            "weight_decay" => self.weight_decay = p(key, v)?,
            "eta_recon" => self.eta_recon = p(key, v)?,
            "eta_r1" => self.eta_r1 = p(key, v)?,
            "eta_r2" => self.eta_r2 = p(key, v)?,
            "lambda_loc" => self.lambda_loc = p(key, v)?,
            "lambda_sst" => self.lambda_sst = p(key, v)?,
            "ckpt_every" => self.ckpt_every = p(key, v)?,
            "idw_power" => self.idw_power = p(key, v)?,
            "idw_zero_eps" => self.idw_zero_eps = p(key, v)?,
            "cnn_channel_div" => self.cnn_channel_div = p(key, v)?,
            "cnn_hidden" => self.cnn_hidden = p(key, v)?,
            "cnn_epochs" => self.cnn_epochs = p(key, v)?,
            "cnn_lr" => self.cnn_lr = p(key, v)?,
            "cnn_checkpoint" => self.cnn_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "train_start" => self.train_start = p(key, v)?,
            "train_end" => self.train_end = p(key, v)?,
            "test_start" => self.test_start = p(key, v)?,
            "test_end" => self.test_end = p(key, v)?,
            "train_stride_deg" => self.train_stride_deg = p(key, v)?,
            "test_offset_deg" => self.test_offset_deg = p(key, v)?,
            "synth_n_lon" => self.synth_n_lon = p(key, v)?,
            "synth_n_lat" => self.synth_n_lat = p(key, v)?,
            "synth_months" => self.synth_months = p(key, v)?,
            "synth_start" => self.synth_start = p(key, v)?,
            "synth_origin_lon" => self.synth_origin_lon = p(key, v)?,
            "synth_origin_lat" => self.synth_origin_lat = p(key, v)?,
            "eval_depths" => {
                self.eval_depths = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| p::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "report_timing" => self.report_timing = p(key, v)?,
            "workers" => self.workers = p(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator()?;
        self.train()?.validate()?;
        self.idw().validate()?;
        self.split()?;
        if self.eval_depths.iter().any(|d| !(*d >= 0.0 && *d < self.depth_count as f64)) {
            return Err(Error::Config(format!(
                "eval_depths {:?} must lie within the {}-level profile",
                self.eval_depths, self.depth_count
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        let g = GeneratorConfig {
            d_r: self.d_r,
            n_attn_layers: self.n_attn_layers,
            dropout: self.dropout,
            n_refs: 8,
            depth_count: self.depth_count,
            ffn_mult: self.ffn_mult,
            fmb_kernel: self.fmb_kernel,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            warmup_epochs: self.warmup_epochs,
            stage1_epochs: self.stage1_epochs,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            weights: LossWeights {
                eta_recon: self.eta_recon,
                eta_r1: self.eta_r1,
                eta_r2: self.eta_r2,
                lambda_loc: self.lambda_loc,
                lambda_sst: self.lambda_sst,
            },
            ckpt_every: self.ckpt_every,
            seed: self.seed,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn idw(&self) -> IdwConfig {
        IdwConfig {
            p: self.idw_power,
            zero_dist_eps: self.idw_zero_eps,
        }
    }

    pub fn cnn(&self) -> CnnConfig {
        CnnConfig {
            depth_count: self.depth_count,
            n_refs: 8,
            channel_div: self.cnn_channel_div,
            hidden: self.cnn_hidden,
            epochs: self.cnn_epochs,
            batch_size: self.batch_size,
            lr: self.cnn_lr,
            lr_min: self.lr_min,
            warmup_epochs: 2.min(self.cnn_epochs.saturating_sub(1)),
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn split(&self) -> Result<SplitSpec> {
        Ok(SplitSpec {
            train_months: MonthRange::new(self.train_start, self.train_end)?,
            test_months: MonthRange::new(self.test_start, self.test_end)?,
            train_stride_deg: self.train_stride_deg,
            test_offset_deg: self.test_offset_deg,
        })
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            origin: GeoCoordinate {
                lon: self.synth_origin_lon,
                lat: self.synth_origin_lat,
            },
            start: self.synth_start,
            ..SynthSpec::new(self.seed, self.synth_n_lon, self.synth_n_lat, self.synth_months, self.depth_count)
        }
    }

    /// Every key with its resolved value, in `key = value` form.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let depths: Vec<String> = self.eval_depths.iter().map(|d| d.to_string()).collect();
        let cnn_ck = self.cnn_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("depth_count", self.depth_count.to_string()),
            ("d_r", self.d_r.to_string()),
            ("n_attn_layers", self.n_attn_layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("fmb_kernel", self.fmb_kernel.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_g", self.lr_g.to_string()),
            ("lr_d", self.lr_d.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("stage1_epochs", self.stage1_epochs.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("eta_recon", self.eta_recon.to_string()),
            ("eta_r1", self.eta_r1.to_string()),
            ("eta_r2", self.eta_r2.to_string()),
            ("lambda_loc", self.lambda_loc.to_string()),
            ("lambda_sst", self.lambda_sst.to_string()),
            ("ckpt_every", self.ckpt_every.to_string()),
            ("idw_power", self.idw_power.to_string()),
            ("idw_zero_eps", self.idw_zero_eps.to_string()),
            ("cnn_channel_div", self.cnn_channel_div.to_string()),
            ("cnn_hidden", self.cnn_hidden.to_string()),
            ("cnn_epochs", self.cnn_epochs.to_string()),
            ("cnn_lr", self.cnn_lr.to_string()),
            ("cnn_checkpoint", cnn_ck),
            ("train_start", self.train_start.to_string()),
            ("train_end", self.train_end.to_string()),
            ("test_start", self.test_start.to_string()),
            ("test_end", self.test_end.to_string()),
            ("train_stride_deg", self.train_stride_deg.to_string()),
            ("test_offset_deg", self.test_offset_deg.to_string()),
            ("synth_n_lon", self.synth_n_lon.to_string()),
            ("synth_n_lat", self.synth_n_lat.to_string()),
            ("synth_months", self.synth_months.to_string()),
            ("synth_start", self.synth_start.to_string()),
            ("synth_origin_lon", self.synth_origin_lon.to_string()),
            ("synth_origin_lat", self.synth_origin_lat.to_string()),
            ("eval_depths", depths.join(",")),
            ("report_timing", self.report_timing.to_string()),
            ("workers", self.workers.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
