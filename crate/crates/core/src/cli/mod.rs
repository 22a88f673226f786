//! The `sspfield` command line.

mod gradsuite;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::baselines::{cnn_train, CnnModel, IdwEstimator, MeanEstimator};
use crate::config::RunConfig;
use crate::datamodel::{GeoCoordinate, Reference, ReferenceSet, Sample, YearMonth};
use crate::error::{Error, Result};
use crate::evaluation::{compare_methods, export_embeddings, EvalOptions, Estimator};
use crate::exec::{init_workers, Execution};
use crate::ingest::{build_samples, load_grid, save_grid, synthesize_field, GridField, WINDOW_OFFSETS};
use crate::training::{train, Ragan, TrainRun};

pub use gradsuite::{gradcheck_suite, GradCheckRow, GRADCHECK_TOLERANCE};

#[derive(Debug, Parser)]
#[command(name = "sspfield", version, about = "Sound speed profile construction from SST and neighbouring profiles")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// `key = value` configuration file, applied after the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base settings: `desk` (default) or `paper`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding `ssp.csv` and `sst.csv`.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Checkpoint stem (the `.manifest` / `.bin` suffix is optional).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic grid to the data directory.
    Synth,
    /// Train the adversarial model and the CNN baseline.
    Train,
    /// Compare methods on the held-out split and write report CSVs.
    Eval {
        /// CNN checkpoint stem; defaults to `cnn_best` beside `--checkpoint`.
        #[arg(long)]
        cnn_checkpoint: Option<PathBuf>,
    },
    /// Construct the profile at one grid point from its eight neighbours.
    Predict {
        #[arg(long, allow_negative_numbers = true)]
        lon: f64,
        #[arg(long, allow_negative_numbers = true)]
        lat: f64,
        #[arg(long)]
        year: i32,
        #[arg(long)]
        month: u32,
        /// Target SST in degrees C, when the grid has no value at the target.
        #[arg(long, allow_negative_numbers = true)]
        sst: Option<f64>,
    },
    /// Finite-difference check of every primitive and network.
    Gradcheck,
}

/// Desk defaults, then preset, then config file, then flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(common.preset.as_deref().unwrap_or("desk"))?;
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execution(cfg: &RunConfig) -> Execution {
    if cfg.workers <= 1 {
        Execution::Sequential
    } else {
        init_workers(cfg.workers);
        Execution::Parallel
    }
}

fn stem(p: &Path) -> PathBuf {
    match p.extension().and_then(|e| e.to_str()) {
        Some("manifest") | Some("bin") => p.with_extension(""),
        _ => p.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn grid_paths(cfg: &RunConfig) -> (PathBuf, PathBuf) {
    (cfg.data_dir.join("ssp.csv"), cfg.data_dir.join("sst.csv"))
}

fn load_data(cfg: &RunConfig) -> Result<GridField> {
    let (ssp, sst) = grid_paths(cfg);
    let field = load_grid(&ssp, &sst)?;
    if let Some(d) = field.depth_count() {
        if d != cfg.depth_count {
            return Err(Error::Config(format!(
                "grid profiles have {d} depths but depth_count = {}",
                cfg.depth_count
            )));
        }
    }
    Ok(field)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let field = synthesize_field(&cfg.synth())?;
    create_dir(&cfg.data_dir)?;
    let (ssp, sst) = grid_paths(cfg);
    save_grid(&field, &ssp, &sst)?;
    println!(
        "wrote {} cells ({} x {} x {} months, D = {}) to {} and {}",
        field.present_count(),
        field.n_lon,
        field.n_lat,
        field.months.len(),
        cfg.depth_count,
        ssp.display(),
        sst.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let exec = execution(cfg);
    let field = load_data(cfg)?;
    let split = build_samples(&field, &cfg.split()?)?;
    println!("samples: {} train, {} test", split.train.len(), split.test.len());
    create_dir(&cfg.out_dir)?;
    let started = Instant::now();
    let (_model, out) = train(
        &split.train,
        &split.test,
        &cfg.generator()?,
        &cfg.train()?,
        TrainRun {
            out_dir: Some(&cfg.out_dir),
            exec,
            observer: None,
        },
    )?;
    for m in &out.metrics {
        println!(
            "epoch {:>3} stage {} lr_g {:.3e} L_G {:.5} L_D {:.5} test rmse_eq33 {:.5}",
            m.epoch, m.stage, m.lr_g, m.loss_g, m.loss_d, m.test_rmse
        );
    }
    println!(
        "MDF-RAGAN: initial {:.5}, best {:.5} at epoch {}",
        out.initial_rmse, out.best_rmse, out.best_epoch
    );
    let ragan_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let (_cnn, cout) = cnn_train(&split.train, &split.test, &cfg.cnn(), exec, Some(&cfg.out_dir))?;
    let best = cout.metrics.iter().map(|m| m.2).fold(f64::INFINITY, f64::min);
    println!("CNN: initial {:.5}, best {:.5}", cout.initial_rmse, best);
    println!(
        "training time: MDF-RAGAN {ragan_secs:.1} s, CNN {:.1} s; checkpoints in {}",
        started.elapsed().as_secs_f64(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, cnn_checkpoint: Option<&Path>) -> Result<()> {
    let exec = execution(cfg);
    let field = load_data(cfg)?;
    let test = build_samples(&field, &cfg.split()?)?.test;

    let ragan = checkpoint.map(|p| Ragan::load(&stem(p))).transpose()?;
    let cnn_path = cnn_checkpoint
        .map(stem)
        .or_else(|| cfg.cnn_checkpoint.as_deref().map(stem))
        .or_else(|| {
            let sib = checkpoint?.parent()?.join("cnn_best");
            sib.with_extension("manifest").exists().then_some(sib)
        });
    let cnn = cnn_path.as_deref().map(CnnModel::load).transpose()?;

    let idw = IdwEstimator { cfg: cfg.idw() };
    let mut methods: Vec<&dyn Estimator> = Vec::new();
    match &ragan {
        Some(m) => methods.push(m),
        None => println!("note: no --checkpoint given; skipping MDF-RAGAN"),
    }
    match &cnn {
        Some(m) => methods.push(m),
        None => println!("note: no CNN checkpoint found; skipping CNN"),
    }
    methods.push(&idw);
    methods.push(&MeanEstimator);

    let report = compare_methods(
        &test,
        &methods,
        &EvalOptions {
            depths_m: cfg.eval_depths.clone(),
            exec,
            report_timing: cfg.report_timing,
        },
    )?;
    report.write(&cfg.out_dir, &cfg.eval_depths)?;
    if let Some(m) = &ragan {
        let n = export_embeddings(m, &test, &cfg.out_dir.join("embeddings.csv"))?;
        println!("embeddings.csv: {n} rows");
    }
    println!("{:<10} {:>12} {:>10}", "method", "rmse_eq33", "params");
    for m in &report.methods {
        let flag = if m.partial { " (partial)" } else { "" };
        println!("{:<10} {:>12.6} {:>10}{flag}", m.method, m.overall_rmse, m.n_params);
    }
    println!("{} test samples; reports in {}", report.n_samples, cfg.out_dir.display());
    Ok(())
}

/// Sample at lattice point `(i, j)` of month `m`. The target SST comes from
/// the grid unless given; the target profile is attached when measured.
pub fn target_sample(field: &GridField, m: usize, i: usize, j: usize, sst: Option<f64>) -> Result<Sample> {
    if i == 0 || j == 0 || i + 1 >= field.n_lon || j + 1 >= field.n_lat {
        return Err(Error::Range(format!("grid point ({i}, {j}) has no full 3x3 neighbourhood")));
    }
    let mut refs = Vec::with_capacity(8);
    for (di, dj) in WINDOW_OFFSETS {
        let (ni, nj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
        let c = field.cell(m, ni, nj).ok_or_else(|| {
            let at = field.coord(ni, nj);
            Error::Range(format!("neighbour at ({}, {}) is missing", at.lon, at.lat))
        })?;
        refs.push(Reference {
            coord: field.coord(ni, nj),
            sst: c.sst,
            profile: c.profile.clone(),
        });
    }
    let centre = field.cell(m, i, j);
    let target_sst = sst
        .or(centre.map(|c| c.sst))
        .ok_or_else(|| Error::Range("no SST at the target; pass --sst".into()))?;
    Sample::new(
        field.coord(i, j),
        target_sst,
        ReferenceSet::new(refs)?,
        centre.map(|c| c.profile.clone()),
        field.months[m],
    )
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: Option<&Path>, at: GeoCoordinate, ym: YearMonth, sst: Option<f64>) -> Result<()> {
    let ck = checkpoint.ok_or_else(|| Error::Config("predict needs --checkpoint".into()))?;
    let model = Ragan::load(&stem(ck))?;
    let field = load_data(cfg)?;
    let m = field
        .month_index(ym)
        .ok_or_else(|| Error::Range(format!("month {ym} is not in the grid")))?;
    let (i, j) = field
        .locate(at)
        .ok_or_else(|| Error::Range(format!("({}, {}) is not a grid point", at.lon, at.lat)))?;
    let s = target_sample(&field, m, i, j, sst)?;
    let pred = model.predict(&s)?;

    let mut csv = String::from("depth_m,speed_ms");
    if s.target_profile.is_some() {
        csv.push_str(",measured_ms");
    }
    csv.push('\n');
    for (k, v) in pred.speeds().iter().enumerate() {
        csv.push_str(&format!("{},{v}", pred.depth_at(k)));
        if let Some(t) = &s.target_profile {
            csv.push_str(&format!(",{}", t.speeds()[k]));
        }
        csv.push('\n');
    }
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("predict.csv");
    fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let exec = execution(cfg);
    let started = Instant::now();
    let rows = gradcheck_suite(cfg.seed, exec)?;
    println!("{:<16} {:>8} {:>7} {:>14}  result", "check", "params", "probes", "max_rel_err");
    for r in &rows {
        println!(
            "{:<16} {:>8} {:>7} {:>14.3e}  {}",
            r.name,
            r.n_params,
            r.probes,
            r.max_rel_error,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    println!("{} checks in {:.1} s", rows.len(), started.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check above {GRADCHECK_TOLERANCE:e}: {}",
            failed.join(", ")
        )))
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    println!("# resolved configuration");
    print!("{}", cfg.render());
    println!("# end configuration");
    let ck = cli.common.checkpoint.as_deref();
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { cnn_checkpoint } => cmd_eval(&cfg, ck, cnn_checkpoint.as_deref()),
        Command::Predict {
            lon,
            lat,
            year,
            month,
            sst,
        } => cmd_predict(&cfg, ck, GeoCoordinate::new(*lon, *lat)?, YearMonth::new(*year, *month)?, *sst),
        Command::Gradcheck => cmd_gradcheck(&cfg),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
