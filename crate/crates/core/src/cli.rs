//! Command-line entry points. Every command resolves its configuration,
//! writes it to `<output_dir>/<run-id>/resolved-config.toml`, and puts its
//! artifacts next to it.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::attack::{attack_batch, fmt_f64, write_summary_csv, write_trace_csv, AttackCriterion, SummaryRow};
use crate::augment::{run_augmentation, AugmentMethod, LEDGER_HEADER};
use crate::config::{AttackMethod, CriterionChoice, RunConfig};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::mine::calibrate_gaussian;
use crate::models::{train_model, ModelKind, ModelState, TrainConfig};
use crate::report::Tables;
use crate::seed::derive_seed;

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";
pub const CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Parser)]
#[command(name = "uae", version, about = "MI-guided adversarial examples, MinMax attacks and UAE augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, clap::Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `run_id`.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Overrides the root `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Minmax,
    Penalty,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AugmentArg {
    MineUae,
    L2Uae,
    Gaussian,
    Geometric,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured model and save a checkpoint.
    Train(Common),
    /// Attack test samples; writes one trace per sample and a summary.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Attack only this sample.
        #[arg(long)]
        sample: Option<usize>,
        /// Number of consecutive samples from `targets.first_sample`.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Build an augmented training set, retrain, and compare test error.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<AugmentArg>,
    },
    /// Check the MI estimator on Gaussian pairs with known MI.
    MineCalibrate(Common),
    /// Tabulate attack summaries and augmentation ledgers.
    Report {
        /// CSV files, or directories searched recursively for
        /// `summary.csv` and `ledger.csv`.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// text printed on success.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::error::ErrorKind;
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli.command),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => Ok(e.to_string()),
        Err(e) => Err(Error::Usage(e.to_string())),
    }
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            train_cmd(&cfg)
        }
        Command::Attack {
            common,
            sample,
            count,
            method,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = sample {
                cfg.targets.first_sample = s;
                cfg.targets.count = 1;
            }
            if let Some(c) = count {
                cfg.targets.count = c;
            }
            if let Some(m) = method {
                cfg.targets.method = match m {
                    MethodArg::Minmax => AttackMethod::Minmax,
                    MethodArg::Penalty => AttackMethod::Penalty,
                };
            }
            attack_cmd(&cfg)
        }
        Command::Augment { common, method } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.augment.method = match m {
                    AugmentArg::MineUae => AugmentMethod::MineUae,
                    AugmentArg::L2Uae => AugmentMethod::L2Uae,
                    AugmentArg::Gaussian => AugmentMethod::Gaussian,
                    AugmentArg::Geometric => AugmentMethod::Geometric,
                };
            }
            augment_cmd(&cfg)
        }
        Command::MineCalibrate(common) => {
            let cfg = load(&common)?;
            calibrate_cmd(&cfg)
        }
        Command::Report { paths, out } => report_cmd(&paths, out.as_deref()),
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(r) = &common.run_id {
        cfg.run_id = Some(r.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Loads data, resolves the config against it and persists the result.
fn start(cfg: &RunConfig, command: &str) -> Result<(RunConfig, PathBuf, Dataset, Dataset)> {
    let (train, test) = cfg.load_data()?;
    let resolved = cfg.resolved(command, train.sample_shape())?;
    resolved.check()?;
    let dir = resolved.run_dir(command);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), resolved.to_toml()?)?;
    Ok((resolved, dir, train, test))
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, "model-init", cfg.train.seed),
        ..cfg.train.clone()
    }
}

/// The configured checkpoint, or a freshly trained model saved into `dir`.
fn prepare_model(cfg: &RunConfig, dir: &Path, train: &Dataset) -> Result<ModelState> {
    let spec = cfg.model.spec.clone().expect("resolved config carries a spec");
    match &cfg.model.checkpoint {
        Some(path) => {
            let mut m = ModelState::load(spec, path)?;
            m.meta.epochs = cfg.train.epochs;
            Ok(m)
        }
        None => {
            let m = train_model(spec, train, &train_config(cfg))?;
            m.save(dir.join(CHECKPOINT))?;
            Ok(m)
        }
    }
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let (cfg, dir, train, test) = start(cfg, "train")?;
    let spec = cfg.model.spec.clone().expect("resolved config carries a spec");
    let model = train_model(spec, &train, &train_config(&cfg))?;
    model.save(dir.join(CHECKPOINT))?;

    let mut out = csv_file(&dir.join("train.csv"))?;
    writeln!(out, "epoch,loss")?;
    for (e, l) in model.meta.loss_history.iter().enumerate() {
        writeln!(out, "{},{}", e + 1, fmt_f64(*l))?;
    }
    out.flush()?;

    let mut report = format!("run_id = {}\n", cfg.run_id("train"));
    let _ = writeln!(report, "parameters = {}", model.param_count());
    let _ = writeln!(report, "epochs = {}", model.meta.epochs);
    if let Some(l) = model.meta.final_loss {
        let _ = writeln!(report, "final_loss = {}", fmt_f64(l));
    }
    if model.spec().kind.is_autoencoder() {
        let _ = writeln!(report, "train_recon_error = {}", fmt_f64(model.dataset_recon_error(&train)?));
        let _ = writeln!(report, "test_recon_error = {}", fmt_f64(model.dataset_recon_error(&test)?));
    } else if test.labels().is_some() {
        let _ = writeln!(report, "test_accuracy = {}", fmt_f64(model.accuracy(&test)?));
    }
    fs::write(dir.join("report.txt"), &report)?;
    Ok(report)
}

fn attack_cmd(cfg: &RunConfig) -> Result<String> {
    let (cfg, dir, train, test) = start(cfg, "attack")?;
    let model = Arc::new(prepare_model(&cfg, &dir, &train)?);
    let pool = match cfg.targets.split {
        Split::Train => &train,
        Split::Test => &test,
    };
    let t = &cfg.targets;
    let end = t.first_sample + t.count;
    if t.count == 0 || end > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "samples {}..{end} requested but the {:?} split has {}",
            t.first_sample,
            t.split,
            pool.len()
        )));
    }
    let choice = match (t.criterion, model.spec().kind) {
        (CriterionChoice::Auto, k) if k.is_autoencoder() => CriterionChoice::Unsupervised,
        (CriterionChoice::Auto, _) => CriterionChoice::Untargeted,
        (c, _) => c,
    };
    if choice == CriterionChoice::Unsupervised && !model.spec().kind.is_autoencoder() {
        return Err(Error::Config("the unsupervised criterion needs an autoencoder".into()));
    }
    if choice != CriterionChoice::Unsupervised && model.spec().kind != ModelKind::Classifier {
        return Err(Error::Config("supervised criteria need a classifier".into()));
    }
    if choice == CriterionChoice::Targeted && t.target_class.is_none() {
        return Err(Error::Config("[targets] target_class is required for targeted attacks".into()));
    }

    let samples: Vec<(usize, _)> = (t.first_sample..end).map(|i| (i, pool.sample_tensor(i))).collect();
    let kappa = cfg.attack.kappa;
    let make = |id: usize, x: &crate::tensor::Tensor| -> Result<AttackCriterion> {
        match choice {
            CriterionChoice::Unsupervised => AttackCriterion::unsupervised(model.clone(), x, kappa),
            CriterionChoice::Targeted => AttackCriterion::targeted(model.clone(), t.target_class.unwrap_or(0), kappa),
            _ => {
                let y = pool
                    .label(id)
                    .ok_or_else(|| Error::Data(format!("sample {id} has no label")))?;
                AttackCriterion::untargeted(model.clone(), y, kappa)
            }
        }
    };
    let attack = crate::attack::AttackConfig {
        seed: derive_seed(cfg.seed, "attack", cfg.attack.seed),
        ..cfg.attack.clone()
    };
    let results = attack_batch(&samples, make, &attack, t.method == AttackMethod::Penalty);

    fs::create_dir_all(dir.join("traces"))?;
    let mut rows = Vec::with_capacity(results.len());
    for ((id, _), r) in samples.iter().zip(results) {
        let r = r?;
        let mut out = csv_file(&dir.join("traces").join(format!("sample_{id}.csv")))?;
        write_trace_csv(&mut out, &r.trace)?;
        out.flush()?;
        let mut row = SummaryRow::new(*id, &r);
        if !cfg.timing {
            row.wallclock_ms = 0;
        }
        rows.push(row);
    }
    let mut out = csv_file(&dir.join("summary.csv"))?;
    write_summary_csv(&mut out, &rows)?;
    out.flush()?;

    let mut tables = Tables::default();
    tables.add_file(&dir.join("summary.csv"))?;
    let report = tables.render();
    fs::write(dir.join("report.txt"), &report)?;
    Ok(report)
}

fn augment_cmd(cfg: &RunConfig) -> Result<String> {
    let (cfg, dir, train, test) = start(cfg, "augment")?;
    let model = prepare_model(&cfg, &dir, &train)?;
    if !model.spec().kind.is_autoencoder() {
        return Err(Error::Config("augmentation retrains an autoencoder".into()));
    }
    let model = Arc::new(model);
    let plan = crate::augment::AugmentationPlan {
        seed: derive_seed(cfg.seed, "augment", cfg.augment.seed),
        ..cfg.augment.clone()
    };
    let (_, mut report) = run_augmentation(&train, &test, &model, &train_config(&cfg), &plan)?;
    if !cfg.timing {
        report = report.without_timing();
    }
    let run_id = cfg.run_id("augment");
    fs::write(dir.join("ledger.csv"), format!("{LEDGER_HEADER}\n{}\n", report.ledger_row(&run_id)))?;
    let text = report.to_key_value(&run_id);
    fs::write(dir.join("report.txt"), &text)?;
    Ok(text)
}

fn calibrate_cmd(cfg: &RunConfig) -> Result<String> {
    let cfg = cfg.resolved("mine-calibrate", &[cfg.calibrate.dim])?;
    let dir = cfg.run_dir("mine-calibrate");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    let calib = crate::mine::CalibrationConfig {
        seed: derive_seed(cfg.seed, "calibrate", cfg.calibrate.seed),
        ..cfg.calibrate.clone()
    };
    let r = calibrate_gaussian(&calib)?;
    let mut out = csv_file(&dir.join("calibration.csv"))?;
    writeln!(out, "step,estimate")?;
    for (s, e) in &r.history {
        writeln!(out, "{s},{}", fmt_f64(*e))?;
    }
    out.flush()?;
    let text = format!(
        "run_id = {}\nanalytic = {}\nestimate = {}\nrelative_error = {}\nsteps = {}\n",
        cfg.run_id("mine-calibrate"),
        fmt_f64(r.analytic),
        fmt_f64(r.estimate),
        fmt_f64(r.relative_error),
        r.steps
    );
    fs::write(dir.join("report.txt"), &text)?;
    Ok(text)
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() {
                collect(&e, out)?;
            } else if matches!(e.file_name().and_then(|n| n.to_str()), Some("summary.csv" | "ledger.csv")) {
                out.push(e);
            }
        }
        Ok(())
    } else if path.is_file() {
        out.push(path.to_path_buf());
        Ok(())
    } else {
        Err(Error::Data(format!("{} not found", path.display())))
    }
}

fn report_cmd(paths: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let mut files = Vec::new();
    for p in paths {
        collect(p, &mut files)?;
    }
    if files.is_empty() {
        return Err(Error::Data("no summary.csv or ledger.csv found".into()));
    }
    let mut tables = Tables::default();
    for f in &files {
        tables.add_file(f)?;
    }
    let text = tables.render();
    if let Some(o) = out {
        fs::write(o, &text)?;
    }
    Ok(text)
}
