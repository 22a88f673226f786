//! Error metrics, method comparison and report files.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::datamodel::{Sample, SoundSpeedProfile};
use crate::diffcore::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::apply_norm;
use crate::training::Ragan;

fn check_pairs(preds: &[SoundSpeedProfile], truths: &[SoundSpeedProfile]) -> Result<usize> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset("no predictions to score".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::shape(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let d = truths[0].depth_count();
    if preds.iter().chain(truths).any(|p| p.depth_count() != d) {
        return Err(Error::shape("profiles disagree on depth count"));
    }
    Ok(d)
}

/// `sqrt(mean_i ||pred_i - truth_i||_2)`: the root of the mean unsquared
/// L2 distance.
pub fn rmse_eq33(preds: &[SoundSpeedProfile], truths: &[SoundSpeedProfile]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            p.speeds()
                .iter()
                .zip(t.speeds())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok((total / preds.len() as f64).sqrt())
}

fn depth_level(depth_m: f64, d: usize) -> Result<usize> {
    let level = depth_m / SoundSpeedProfile::DEPTH_STEP;
    if !(level >= 0.0) || level.fract() != 0.0 || level as usize >= d {
        return Err(Error::Range(format!("depth {depth_m} m is not on the {d}-level grid")));
    }
    Ok(level as usize)
}

/// Standard RMSE over samples at one grid depth.
pub fn rmse_per_depth(preds: &[SoundSpeedProfile], truths: &[SoundSpeedProfile], depth_m: f64) -> Result<f64> {
    let d = check_pairs(preds, truths)?;
    let k = depth_level(depth_m, d)?;
    let ss: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p.speeds()[k] - t.speeds()[k]).powi(2))
        .sum();
    Ok((ss / preds.len() as f64).sqrt())
}

/// [`rmse_eq33`] restricted to one depth: `sqrt(mean |e|)`.
pub fn rmse_eq33_at_depth(preds: &[SoundSpeedProfile], truths: &[SoundSpeedProfile], depth_m: f64) -> Result<f64> {
    let d = check_pairs(preds, truths)?;
    let k = depth_level(depth_m, d)?;
    let s: f64 = preds.iter().zip(truths).map(|(p, t)| (p.speeds()[k] - t.speeds()[k]).abs()).sum();
    Ok((s / preds.len() as f64).sqrt())
}

/// Empirical CDF as a step function over the sorted values.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    pub values: Vec<f64>,
    /// `fractions[i]` is the share of errors `<= values[i]`.
    pub fractions: Vec<f64>,
}

impl Ecdf {
    /// Share of errors `<= x`.
    pub fn at(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= x);
        if k == 0 {
            0.0
        } else {
            self.fractions[k - 1]
        }
    }
}

pub fn ecdf(errors: &[f64]) -> Result<Ecdf> {
    if errors.is_empty() {
        return Err(Error::EmptyDataset("no errors for an ECDF".into()));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::Numerical("NaN error value".into()));
    }
    let mut values = errors.to_vec();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let fractions = values
        .iter()
        .map(|v| values.partition_point(|x| x <= v) as f64 / n)
        .collect();
    Ok(Ecdf { values, fractions })
}

/// A profile estimator under comparison.
pub trait Estimator: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, s: &Sample) -> Result<SoundSpeedProfile>;
    fn n_params(&self) -> usize {
        0
    }
}

impl Estimator for Ragan {
    fn name(&self) -> &str {
        "MDF-RAGAN"
    }

    fn estimate(&self, s: &Sample) -> Result<SoundSpeedProfile> {
        self.predict(s)
    }

    /// Parameters used at inference time.
    fn n_params(&self) -> usize {
        self.gen.n_params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRow {
    pub depth_m: f64,
    pub rmse: f64,
    pub rmse_eq33: f64,
    pub ecdf: Ecdf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationRow {
    pub lon: f64,
    pub lat: f64,
    pub n: usize,
    pub rmse_eq33: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub n_params: usize,
    pub overall_rmse: f64,
    pub per_depth: Vec<DepthRow>,
    pub per_location: Vec<LocationRow>,
    /// `(sample index in canonical order, message)`.
    pub failures: Vec<(usize, String)>,
    pub partial: bool,
    pub inference_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub methods: Vec<MethodReport>,
    pub n_samples: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub depths_m: Vec<f64>,
    pub exec: Execution,
    /// When false the timing column is written as 0 so reports are
    /// byte-reproducible.
    pub report_timing: bool,
}

fn sample_order(a: &Sample, b: &Sample) -> Ordering {
    a.epoch_tag
        .cmp(&b.epoch_tag)
        .then(a.target_coord.lon.total_cmp(&b.target_coord.lon))
        .then(a.target_coord.lat.total_cmp(&b.target_coord.lat))
}

/// Apply every estimator to every sample and aggregate in a canonical sample
/// order, so the report does not depend on the input order.
pub fn compare_methods(samples: &[Sample], estimators: &[&dyn Estimator], opts: &EvalOptions) -> Result<EvaluationReport> {
    if estimators.is_empty() {
        return Err(Error::Contract("no estimators to compare".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no evaluation samples".into()));
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| sample_order(a, b));
    let truths = sorted.iter().map(|s| s.truth().cloned()).collect::<Result<Vec<_>>>()?;

    let mut methods = Vec::with_capacity(estimators.len());
    for est in estimators {
        let start = Instant::now();
        let outputs = opts.exec.map(&sorted, |s| est.estimate(s));
        let elapsed = start.elapsed().as_secs_f64() * 1e3;

        let mut preds = Vec::new();
        let mut kept_truths = Vec::new();
        let mut kept_samples = Vec::new();
        let mut failures = Vec::new();
        for (i, out) in outputs.into_iter().enumerate() {
            match out {
                Ok(p) if p.depth_count() == truths[i].depth_count() => {
                    preds.push(p);
                    kept_truths.push(truths[i].clone());
                    kept_samples.push(sorted[i]);
                }
                Ok(p) => failures.push((i, format!("estimate has {} depths", p.depth_count()))),
                Err(e) => failures.push((i, e.to_string())),
            }
        }
        let (overall, per_depth, per_location) = if preds.is_empty() {
            (f64::NAN, Vec::new(), Vec::new())
        } else {
            let mut rows = Vec::with_capacity(opts.depths_m.len());
            for &depth in &opts.depths_m {
                let k = depth_level(depth, kept_truths[0].depth_count())?;
                let errs: Vec<f64> = preds
                    .iter()
                    .zip(&kept_truths)
                    .map(|(p, t)| (p.speeds()[k] - t.speeds()[k]).abs())
                    .collect();
                rows.push(DepthRow {
                    depth_m: depth,
                    rmse: rmse_per_depth(&preds, &kept_truths, depth)?,
                    rmse_eq33: rmse_eq33_at_depth(&preds, &kept_truths, depth)?,
                    ecdf: ecdf(&errs)?,
                });
            }
            (rmse_eq33(&preds, &kept_truths)?, rows, per_location(&kept_samples, &preds, &kept_truths)?)
        };
        methods.push(MethodReport {
            method: est.name().to_string(),
            n_params: est.n_params(),
            overall_rmse: overall,
            per_depth,
            per_location,
            partial: !failures.is_empty(),
            failures,
            inference_ms: if opts.report_timing { elapsed } else { 0.0 },
        });
    }
    Ok(EvaluationReport {
        methods,
        n_samples: sorted.len(),
    })
}

fn per_location(samples: &[&Sample], preds: &[SoundSpeedProfile], truths: &[SoundSpeedProfile]) -> Result<Vec<LocationRow>> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let key = |i: usize| (samples[i].target_coord.lon, samples[i].target_coord.lat);
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    let mut rows = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let k = key(idx[start]);
        let mut end = start;
        while end < idx.len() && key(idx[end]) == k {
            end += 1;
        }
        let p: Vec<SoundSpeedProfile> = idx[start..end].iter().map(|&i| preds[i].clone()).collect();
        let t: Vec<SoundSpeedProfile> = idx[start..end].iter().map(|&i| truths[i].clone()).collect();
        rows.push(LocationRow {
            lon: k.0,
            lat: k.1,
            n: end - start,
            rmse_eq33: rmse_eq33(&p, &t)?,
        });
        start = end;
    }
    Ok(rows)
}

fn depth_tag(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

impl EvaluationReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn overall_csv(&self) -> String {
        let mut s = String::from("method,rmse_eq33,n_params,inference_ms\n");
        for m in &self.methods {
            let _ = writeln!(s, "{},{},{},{}", m.method, m.overall_rmse, m.n_params, m.inference_ms);
        }
        s
    }

    pub fn per_depth_csv(&self) -> String {
        let mut s = String::from("method,depth_m,rmse,rmse_eq33\n");
        for m in &self.methods {
            for r in &m.per_depth {
                let _ = writeln!(s, "{},{},{},{}", m.method, depth_tag(r.depth_m), r.rmse, r.rmse_eq33);
            }
        }
        s
    }

    pub fn ecdf_csv(&self, depth_m: f64) -> String {
        let mut s = String::from("method,abs_error_ms,fraction\n");
        for m in &self.methods {
            if let Some(r) = m.per_depth.iter().find(|r| r.depth_m == depth_m) {
                for (v, f) in r.ecdf.values.iter().zip(&r.ecdf.fractions) {
                    let _ = writeln!(s, "{},{v},{f}", m.method);
                }
            }
        }
        s
    }

    pub fn per_location_csv(&self) -> String {
        let mut s = String::from("method,lon_deg,lat_deg,n,rmse_eq33\n");
        for m in &self.methods {
            for r in &m.per_location {
                let _ = writeln!(s, "{},{},{},{},{}", m.method, r.lon, r.lat, r.n, r.rmse_eq33);
            }
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("method,sample,error\n");
        for m in &self.methods {
            for (i, msg) in &m.failures {
                let _ = writeln!(s, "{},{i},\"{}\"", m.method, msg.replace('"', "'"));
            }
        }
        s
    }

    /// Write `overall.csv`, `per_depth.csv`, `per_location.csv`, one
    /// `ecdf_{depth}.csv` per depth and, if any estimate failed, `failures.csv`.
    pub fn write(&self, dir: &Path, depths_m: &[f64]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("overall.csv".into(), self.overall_csv())?;
        put("per_depth.csv".into(), self.per_depth_csv())?;
        put("per_location.csv".into(), self.per_location_csv())?;
        for &d in depths_m {
            put(format!("ecdf_{}.csv", depth_tag(d)), self.ecdf_csv(d))?;
        }
        if self.methods.iter().any(|m| m.partial) {
            put("failures.csv".into(), self.failures_csv())?;
        }
        Ok(())
    }
}

pub const EMBEDDING_KINDS: [&str; 7] = [
    "gen_target_label",
    "gen_ref_label_mean",
    "gen_ref_ssp_mean",
    "disc_candidate_real",
    "disc_candidate_fake",
    "disc_ref_loc_mean",
    "disc_ref_sst_mean",
];

fn row_mean(v: Var<'_>) -> Var<'_> {
    let n = v.rows() as f64;
    v.sum_rows().scale(1.0 / n)
}

/// Intermediate feature vectors for every sample, one CSV row per
/// `(sample, kind)`: `sample,kind,f0,...`.
pub fn export_embeddings(model: &Ragan, samples: &[Sample], path: &Path) -> Result<usize> {
    let d_r = model.gen.cfg.d_r;
    let mut out = String::from("sample,kind");
    for k in 0..d_r {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    let mut rows = 0;
    for (i, s) in samples.iter().enumerate() {
        let ns = apply_norm(s, &model.stats)?;
        let target = ns
            .target_profile
            .clone()
            .ok_or_else(|| Error::Contract("embedding export needs samples with truth".into()))?;
        let tape = Tape::new();
        let gb = model.gen.params.bind(&tape, false);
        let db = model.disc.params.bind(&tape, false);
        let tr = model.gen.forward(&tape, &gb, &ns, &mut Mode::Eval)?;
        let d = ns.depth_count;
        let fake = tr.delta.reshape(&[d]) + tape.constant(ns.ref_mean.clone(), &[d]);
        let ctx = model.disc.context(&tape, &db, &ns)?;
        let real_out = model.disc.forward(&db, tape.constant(target, &[d]), &ctx, &mut Mode::Eval)?;
        let fake_out = model.disc.forward(&db, fake, &ctx, &mut Mode::Eval)?;
        let vectors = [
            tr.labels.target,
            row_mean(tr.labels.refs),
            row_mean(tr.ref_features),
            real_out.candidate_feature,
            fake_out.candidate_feature,
            row_mean(ctx.loc_labels),
            row_mean(ctx.sst_labels),
        ];
        tape.check_finite()?;
        for (kind, v) in EMBEDDING_KINDS.iter().zip(vectors) {
            let _ = write!(out, "{i},{kind}");
            for x in v.value() {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
            rows += 1;
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> SoundSpeedProfile {
        SoundSpeedProfile::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rmse_eq33_cases() {
        let a = vec![p(&[1500.0, 1490.0]), p(&[1501.0, 1480.0])];
        assert_eq!(rmse_eq33(&a, &a).unwrap(), 0.0);
        let t = vec![p(&[0.0, 0.0]), p(&[0.0, 0.0])];
        let q = vec![p(&[3.0, 0.0]), p(&[0.0, 4.0])];
        assert!((rmse_eq33(&q, &t).unwrap() - 3.5f64.sqrt()).abs() < 1e-15);
        assert!((rmse_eq33(&q, &t).unwrap() - 1.870829).abs() < 1e-6);
        assert_eq!(rmse_eq33(&[p(&[1502.25])], &[p(&[1500.0])]).unwrap(), 1.5);
        assert!(matches!(rmse_eq33(&[], &[]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn per_depth_cases() {
        let t = vec![p(&[0.0, 0.0, 0.0]), p(&[0.0, 0.0, 0.0])];
        let q = vec![p(&[9.0, 3.0, 1.0]), p(&[9.0, -4.0, 1.0])];
        assert_eq!(rmse_per_depth(&t, &t, 1.0).unwrap(), 0.0);
        assert!((rmse_per_depth(&q, &t, 1.0).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((rmse_per_depth(&q, &t, 1.0).unwrap() - 3.535534).abs() < 1e-6);
        assert!(matches!(rmse_per_depth(&q, &t, 3.0), Err(Error::Range(_))));
        assert!(matches!(rmse_per_depth(&q, &t, 0.5), Err(Error::Range(_))));
    }

    #[test]
    fn ecdf_cases() {
        let e = ecdf(&[0.7]).unwrap();
        assert_eq!((e.values.clone(), e.fractions.clone()), (vec![0.7], vec![1.0]));
        let e = ecdf(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(e.at(2.0), 0.5);
        let e = ecdf(&[1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(e.fractions, vec![0.25, 0.75, 0.75, 1.0]);
        assert!(matches!(ecdf(&[]), Err(Error::EmptyDataset(_))));
    }
}
