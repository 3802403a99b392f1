//! Command-line entry point: dataset generation, training, evaluation,
//! gradient checking, and cross-run reporting.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure (including a
//! failed gradient check).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gazefuse::config::{KvMap, ModelConfig, Regime, TrainConfig};
use gazefuse::error::{Error, Result};
use gazefuse::gradcheck::{check_estimator, ModelCheckOptions};
use gazefuse::rngs;
use gazefuse::synth::{Dataset, DatasetSpec};
use gazefuse::train::{
    evaluate, read_summary, train_run, write_run_artifacts, GazeEstimator, RunSummary,
};
use gazefuse::ttgf::FusionTopology;

const TAG_MODEL_INIT: u64 = 0x4d4f44;

#[derive(Parser)]
#[command(
    name = "gazefuse",
    version,
    about = "Transformer gaze-feature fusion with per-dataset gaze adaptation on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic datasets into an output directory.
    GenData(GenDataArgs),
    /// Train an estimator on generated datasets.
    Train(TrainArgs),
    /// Evaluate a finished run's checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Verify every parameter gradient against central finite differences.
    GradCheck(GradCheckArgs),
    /// Tabulate finished runs side by side.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Dataset spec file ([dataset*] sections); built-in four-dataset
    /// defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed for the built-in default specs (ignored with --config).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Face resolution (pixels) when not set in the spec file.
    #[arg(long, default_value_t = 32)]
    face_size: usize,
    /// Eye-patch resolution (pixels) when not set in the spec file.
    #[arg(long, default_value_t = 16)]
    eye_size: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value config with model.* and train.* sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    regime: Option<String>,
    /// on | off
    #[arg(long)]
    gam: Option<String>,
    #[arg(long)]
    topology: Option<String>,
    /// Dataset name for --regime single.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// A finished run directory (checkpoint.gzf + run_manifest.txt).
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    /// Evaluate one dataset by name; all of them when omitted.
    #[arg(long)]
    dataset: Option<String>,
    /// on | off: apply the per-dataset correction heads.
    #[arg(long, default_value = "on")]
    gam: String,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Model config; the exhaustive-check default is the tiny model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Test fixture: corrupt one analytic gradient to prove the check
    /// fails on bad backward rules.
    #[arg(long, hide = true, default_value_t = false)]
    inject_fault: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Finished run directories.
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::GradCheck(args) => cmd_grad_check(args),
        Cmd::Report(args) => cmd_report(args),
    }
}

fn parse_on_off(value: &str, flag: &str) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!(
            "--{flag} must be on or off, got '{other}'"
        ))),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let (specs, face_size, eye_size) = match &args.config {
        Some(path) => {
            let kv = KvMap::load(path)?;
            let specs = DatasetSpec::parse_spec_file(&kv)?;
            (
                specs,
                kv.parse_or("face_size", args.face_size)?,
                kv.parse_or("eye_size", args.eye_size)?,
            )
        }
        None => (
            DatasetSpec::default_four(args.seed),
            args.face_size,
            args.eye_size,
        ),
    };
    std::fs::create_dir_all(&args.out_dir)?;
    for spec in &specs {
        let ds = Dataset::generate(spec, face_size, eye_size)?;
        let dir = args.out_dir.join(&spec.name);
        ds.save(&dir)?;
        println!(
            "{}: {} samples ({} subjects), hash {}",
            dir.display(),
            ds.len(),
            spec.num_subjects,
            &ds.content_hash()[..16]
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads every dataset directory under `data_dir`, ordered by dataset id.
fn load_datasets(data_dir: &Path) -> Result<Vec<Dataset>> {
    if !data_dir.is_dir() {
        return Err(Error::MissingPath(data_dir.display().to_string()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(gazefuse::synth::MANIFEST_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no dataset directories under {}",
            data_dir.display()
        )));
    }
    let mut datasets = dirs
        .iter()
        .map(|d| Dataset::load(d))
        .collect::<Result<Vec<_>>>()?;
    datasets.sort_by_key(|d| d.spec.dataset_id);
    Ok(datasets)
}

fn load_configs(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig)> {
    let kv = match path {
        Some(p) => KvMap::load(p)?,
        None => KvMap::default(),
    };
    Ok((ModelConfig::from_kv(&kv)?, TrainConfig::from_kv(&kv)?))
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let (mut model_cfg, mut train_cfg) = load_configs(args.config.as_deref())?;
    if let Some(t) = &args.topology {
        model_cfg.topology = FusionTopology::from_str(t)?;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(r) = &args.regime {
        train_cfg.regime = Regime::from_str(r)?;
    }
    if let Some(g) = &args.gam {
        train_cfg.gam_enabled = parse_on_off(g, "gam")?;
    }
    if let Some(d) = &args.dataset {
        train_cfg.dataset = Some(d.clone());
    }
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    train_cfg.validate()?;

    let mut datasets = load_datasets(&args.data_dir)?;
    if train_cfg.regime == Regime::Single {
        let name = train_cfg.dataset.clone().unwrap_or_default();
        datasets.retain(|d| d.spec.name == name);
        if datasets.is_empty() {
            return Err(Error::Config(format!("dataset '{name}' not found")));
        }
    }
    for ds in &datasets {
        if ds.face_size != model_cfg.face_size || ds.eye_size != model_cfg.eye_size {
            return Err(Error::Config(format!(
                "dataset '{}' is {}x{} face / {}x{} eyes but the model expects {} / {}",
                ds.spec.name,
                ds.face_size,
                ds.face_size,
                ds.eye_size,
                ds.eye_size,
                model_cfg.face_size,
                model_cfg.eye_size
            )));
        }
    }
    let num_datasets = datasets
        .iter()
        .map(|d| d.spec.dataset_id + 1)
        .max()
        .unwrap_or(1);
    let mut est = GazeEstimator::new(
        model_cfg.clone(),
        num_datasets,
        train_cfg.gam_mode,
        &mut rngs::substream(train_cfg.seed, &[TAG_MODEL_INIT]),
    )?;

    let quiet = args.quiet;
    let mut on_step = |step: usize, loss: f64| {
        if !quiet && step % 50 == 0 {
            println!("step {step}: loss {loss:.5}");
        }
    };
    let output = train_run(&mut est, &datasets, &train_cfg, Some(&mut on_step))?;
    let summary = write_run_artifacts(
        &args.out_dir,
        &est,
        &datasets,
        &model_cfg,
        &train_cfg,
        &output,
    )?;
    // reconstruction info for eval
    let manifest_path = args.out_dir.join("run_manifest.txt");
    let mut kv = KvMap::load(&manifest_path)?;
    kv.set("run.num_datasets", num_datasets);
    std::fs::write(&manifest_path, kv.render())?;

    if !quiet {
        for d in &summary.datasets {
            println!(
                "{}: test error {:.3} deg (vs clean gaze {:.3} deg)",
                d.name, d.test_error_deg, d.test_true_error_deg
            );
        }
        println!(
            "params: estimator {} + {} heads x {} = {} trainable",
            summary.estimator_params,
            summary.datasets.len().saturating_sub(1),
            summary.gam_head_params,
            summary.trainable_params
        );
    }
    println!("run written to {}", args.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let use_gam = parse_on_off(&args.gam, "gam")?;
    let (est, _) = gazefuse::train::load_run_estimator(&args.run_dir)?;
    let datasets = load_datasets(&args.data_dir)?;
    let selected: Vec<&Dataset> = match &args.dataset {
        Some(name) => {
            let ds = datasets
                .iter()
                .find(|d| &d.spec.name == name)
                .ok_or_else(|| Error::Config(format!("dataset '{name}' not found")))?;
            vec![ds]
        }
        None => datasets.iter().collect(),
    };
    println!("dataset,n,error_deg,error_vs_true_deg,l1");
    for ds in selected {
        let stats = evaluate(&est.model, &est.gam, ds, &ds.test_indices(), use_gam)?;
        println!(
            "{},{},{},{},{}",
            ds.spec.name, stats.n, stats.err_vs_label_deg, stats.err_vs_true_deg, stats.l1
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<ExitCode> {
    let model_cfg = match &args.config {
        Some(p) => ModelConfig::from_kv(&KvMap::load(p)?)?,
        None => ModelConfig::tiny(),
    };
    let opts = ModelCheckOptions {
        inject_fault: args.inject_fault,
        ..ModelCheckOptions::default()
    };
    let report = check_estimator(&model_cfg, args.seed, opts)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for dir in &args.run_dirs {
        if !dir.join("summary.json").exists() {
            return Err(Error::MissingPath(dir.display().to_string()));
        }
        rows.push((dir.clone(), read_summary(dir)?));
    }
    let table = render_report(&rows);
    print!("{}", table.text);
    if let Some(out) = &args.out {
        std::fs::write(out, &table.csv)?;
        println!("csv written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

struct ReportTable {
    text: String,
    csv: String,
}

fn render_report(rows: &[(PathBuf, RunSummary)]) -> ReportTable {
    // union of dataset names, first-seen order
    let mut names: Vec<String> = Vec::new();
    for (_, s) in rows {
        for d in &s.datasets {
            if !names.contains(&d.name) {
                names.push(d.name.clone());
            }
        }
    }
    let label = |s: &RunSummary| {
        format!(
            "{}/{}{}",
            s.topology,
            s.regime,
            if s.gam_enabled { "+gam" } else { "" }
        )
    };
    let mut text = format!("{:<24}", "run");
    let mut csv = String::from("run");
    for n in &names {
        let _ = write!(text, "  {n:>10}");
        let _ = write!(csv, ",{n}");
    }
    text.push('\n');
    csv.push('\n');
    for (dir, s) in rows {
        let _ = write!(text, "{:<24}", label(s));
        let _ = write!(csv, "{}", dir.display());
        for n in &names {
            match s.datasets.iter().find(|d| &d.name == n) {
                Some(d) => {
                    let _ = write!(text, "  {:>10.3}", d.test_error_deg);
                    let _ = write!(csv, ",{}", d.test_error_deg);
                }
                None => {
                    let _ = write!(text, "  {:>10}", "-");
                    let _ = write!(csv, ",");
                }
            }
        }
        text.push('\n');
        csv.push('\n');
    }
    ReportTable { text, csv }
}
