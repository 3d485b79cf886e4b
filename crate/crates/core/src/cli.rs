//! The `ialgca` command line.
//!
//! Settings are resolved in order: library defaults, then `--config FILE`,
//! then `--set KEY=VALUE` pairs, then the dedicated flags. Failures print one
//! `error[CODE]: message` line on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::run_ablation;
use crate::attention::AttentionKind;
use crate::data::{generate_synthetic, Dataset};
use crate::error::{Error, Result};
use crate::gradsuite;
use crate::metrics::evaluate;
use crate::model::{load_checkpoint, read_checkpoint, save_checkpoint, DferModel};
use crate::settings::{load_ablation, parse_ablation_with, Settings};
use crate::train::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_GRADCHECK: i32 = 2;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "IALGCA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ialgca",
    version,
    about = "Intensity-aware dynamic expression recognition at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic intensity-graded dataset
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and a training log
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Train every cell of an ablation spec and emit the results CSV
    Ablate(AblateArgs),
    /// List the parameters of a checkpoint
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SettingsArgs {
    /// `key = value` settings file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Generator seed
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Number of classes, class 0 being neutral
    #[arg(long, value_name = "K")]
    pub classes: Option<usize>,
    /// Training clips per class
    #[arg(long, value_name = "N")]
    pub train_per_class: Option<usize>,
    /// Test clips per class
    #[arg(long, value_name = "N")]
    pub test_per_class: Option<usize>,
    /// Fraction of non-neutral clips with low intensity
    #[arg(long, value_name = "P")]
    pub p_low: Option<f64>,
    /// Standard deviation of the pixel noise
    #[arg(long, value_name = "S")]
    pub noise_std: Option<f64>,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn as_str(self) -> &'static str {
        match self {
            OnOff::On => "on",
            OnOff::Off => "off",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttentionArg {
    None,
    Se,
    Cbam,
    Gca,
}

impl From<AttentionArg> for AttentionKind {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::None => AttentionKind::None,
            AttentionArg::Se => AttentionKind::Se,
            AttentionArg::Cbam => AttentionKind::Cbam,
            AttentionArg::Gca => AttentionKind::Gca,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Checkpoint to write
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Channel attention after each residual stage
    #[arg(long, value_enum)]
    pub attention: Option<AttentionArg>,
    /// Weight of the intensity-aware loss
    #[arg(long, value_name = "F")]
    pub lambda: Option<f64>,
    /// Auxiliary classifiers at the attention sites
    #[arg(long, value_enum)]
    pub aux: Option<OnOff>,
    /// Training epochs
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Initial learning rate
    #[arg(long, value_name = "F")]
    pub lr: Option<f64>,
    /// Seed for initialization, shuffling and augmentation
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Training log CSV [default: CKPT.log.csv]
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Skip the per-epoch test-set evaluation
    #[arg(long)]
    pub no_test_eval: bool,
    #[command(flatten)]
    pub settings: SettingsArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Dataset split to evaluate
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Print a JSON document instead of the text report
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict to one module (tensor-autodiff, attention-blocks, losses,
    /// model) or one check by name
    #[arg(long, value_name = "NAME")]
    pub module: Option<String>,
    /// Seed of the random cases
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Ablation spec: shared settings followed by `[cell NAME]` sections
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    /// Run seeds 0..N (overrides the spec)
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,
    /// Where to generate the dataset [default: a temporary directory]
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// `key = value` settings applied before the spec
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint to list
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
}

/// Defaults, then the config file, then `--set` pairs, then `flags`.
fn resolve(args: &SettingsArgs, flags: &[(&str, Option<String>)]) -> Result<Settings> {
    let mut s = match &args.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        s.set(k.trim(), v.trim()).map_err(|m| Error::Config(format!("--set {kv}: {m}")))?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            s.set(k, v).map_err(|m| Error::Config(format!("--{k}: {m}")))?;
        }
    }
    Ok(s)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn default_log_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.as_os_str().to_owned();
    name.push(".log.csv");
    PathBuf::from(name)
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let s = resolve(
        &a.settings,
        &[
            ("data_seed", opt(&a.seed)),
            ("classes", opt(&a.classes)),
            ("train_per_class", opt(&a.train_per_class)),
            ("test_per_class", opt(&a.test_per_class)),
            ("p_low", opt(&a.p_low)),
            ("noise_std", opt(&a.noise_std)),
        ],
    )?;
    let ds = generate_synthetic(&s.data, &a.out)?;
    writeln!(
        out,
        "wrote {} train and {} test clips ({} classes) to {}",
        ds.train.len(),
        ds.test.len(),
        ds.info.num_classes,
        a.out.display()
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let s = resolve(
        &a.settings,
        &[
            ("attention", a.attention.map(|k| AttentionKind::from(k).as_str().to_string())),
            ("lambda", opt(&a.lambda)),
            ("aux", a.aux.map(|v| v.as_str().to_string())),
            ("epochs", opt(&a.epochs)),
            ("lr", opt(&a.lr)),
            ("seed", opt(&a.seed)),
        ],
    )?;
    let ds = Dataset::open(&a.data)?;
    let info = &ds.info;
    let mut model = DferModel::new(s.model_config(info.num_classes, [info.channels, info.height, info.width]))?;
    let test = (!a.no_test_eval).then_some(&ds.test);
    let log = train(&mut model, &s.train, &ds.train, test)?;
    save_checkpoint(&model, &a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    log.save(&log_path)?;
    let mut text = String::new();
    for e in &log.epochs {
        let _ = write!(text, "epoch {:>3}  lr {:.6}  loss {:.4}  train WAR {:.4}", e.epoch, e.lr, e.loss, e.train_war);
        if let (Some(u), Some(w)) = (e.test_uar, e.test_war) {
            let _ = write!(text, "  test UAR {u:.4}  WAR {w:.4}");
        }
        text.push('\n');
    }
    let _ = writeln!(text, "checkpoint {}  log {}", a.out.display(), log_path.display());
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let ds = Dataset::open(&a.data)?;
    let manifest = match a.split {
        SplitArg::Train => &ds.train,
        SplitArg::Test => &ds.test,
    };
    if manifest.num_classes != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, checkpoint has {}",
            manifest.num_classes, model.config.num_classes
        )));
    }
    let report = evaluate(&model, manifest, model.config.frames, 1)?;
    let text = if a.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.render()
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Returns whether every check passed.
fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn std::io::Write) -> Result<bool> {
    let checks = gradsuite::select(a.module.as_deref())?;
    let mut ok = true;
    let io = |e| Error::io("<stdout>", e);
    writeln!(
        out,
        "{:<18}{:<22}{:>6}{:>9}{:>14}{:>10}  status",
        "module", "check", "cases", "redrawn", "max rel err", "tol"
    )
    .map_err(io)?;
    for c in &checks {
        let r = gradsuite::run_check(c, a.seed)?;
        ok &= r.passed();
        writeln!(
            out,
            "{:<18}{:<22}{:>6}{:>9}{:>14.3e}{:>10.0e}  {}",
            r.module,
            r.name,
            r.cases,
            r.redrawn,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        )
        .map_err(io)?;
    }
    Ok(ok)
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    let mut plan = match &a.config {
        Some(cfg) => {
            let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
            parse_ablation_with(&text, Settings::load(cfg)?)?
        }
        None => load_ablation(&a.spec)?,
    };
    if let Some(n) = a.seeds {
        if n == 0 {
            return Err(Error::Config("--seeds must be at least 1".into()));
        }
        plan.seeds = (0..n as u64).collect();
    }
    let tmp;
    let dir = match &a.data_dir {
        Some(d) => d.clone(),
        None => {
            tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            tmp.path().to_path_buf()
        }
    };
    let table = run_ablation(&plan, &dir, |cell, seed, r| {
        let low = r.low_intensity.map_or(f64::NAN, |b| b.war);
        let _ = writeln!(
            err,
            "{} seed {seed}: UAR {:.4} WAR {:.4} low-intensity WAR {low:.4}",
            cell.name, r.uar, r.war
        );
    })?;
    match &a.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            table.write_csv(std::io::BufWriter::new(file))
        }
        None => table.write_csv(out),
    }
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let entries = read_checkpoint(&a.ckpt)?;
    let total: usize = entries.iter().map(|(_, t)| t.len()).sum();
    let width = entries.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut text = String::new();
    for (name, t) in &entries {
        let _ = writeln!(text, "{name:<width$}  {:?}", t.shape());
    }
    let _ = writeln!(text, "{} tensors, {total} values", entries.len());
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Worker count from the environment, if set.
fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn dispatch(cli: &Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<i32> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out)?,
        Command::Train(a) => cmd_train(a, out)?,
        Command::Eval(a) => cmd_eval(a, out)?,
        Command::Gradcheck(a) => {
            if !cmd_gradcheck(a, out)? {
                let _ = writeln!(err, "error[E_GRADCHECK]: gradient check beyond tolerance");
                return Ok(EXIT_GRADCHECK);
            }
        }
        Command::Ablate(a) => cmd_ablate(a, out, err)?,
        Command::Inspect(a) => cmd_inspect(a, out)?,
    }
    Ok(EXIT_OK)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let msg = e.kind().as_str().unwrap_or("invalid arguments");
            let _ = writeln!(err, "error[E_USAGE]: {msg}");
            let _ = write!(err, "{}", e.render());
            return EXIT_ERROR;
        }
    };
    let result = threads_from_env().and_then(|threads| {
        if let Some(n) = threads {
            // Fails only if the global pool already exists, e.g. on a second
            // in-process invocation; that pool is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        dispatch(&cli, out, err)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.code(), single_line(&e.to_string()));
            EXIT_ERROR
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    let _ = std::io::stdout().flush();
    code
}
