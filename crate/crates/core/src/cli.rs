//! The `fapn` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration problem, 3 numerical
//! failure (non-finite values, failed gradient check), 1 anything else.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checks;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{boundary_band, BAND_WIDTHS};
use crate::nn::Arch;
use crate::pgm;
use crate::train::{self, Datasets, CHECKPOINT_DIR, CONFIG_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const LOCK_FILE: &str = ".lock";
pub const COMPARE_FILE: &str = "compare.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const EXPORT_DIR: &str = "export";

#[derive(Parser, Debug)]
#[command(name = "fapn", version, about = "Feature-aligned pyramid experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` override, repeatable; applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one architecture and write metrics, report and checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on the evaluation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train several architectures on the same data and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "fpn,fpn_fam,fapn")]
        archs: Vec<String>,
    },
    /// Finite-difference check of one registered op.
    Gradcheck {
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Write masks, band masks and offset statistics for one eval sample.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Io { .. } | Error::Format(_) => EXIT_CONFIG,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_OTHER,
    }
}

/// Value of `FAPN_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("FAPN_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config("FAPN_THREADS", format!("expected a positive integer, got `{v}`"))),
        },
    }
}

/// Config file, then `--seed/--arch/--out`, then `--set` overrides.
/// `fallback` is read when no `--config` is given and it exists.
pub fn resolve_config(c: &Common, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, fallback) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(f)) if f.is_file() => ExperimentConfig::load(f)?,
        _ => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(a) = &c.arch {
        cfg.arch = a.parse()?;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    for kv in &c.set {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Marker file held for the lifetime of a command writing into `dir`.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(
                "out",
                format!("{} is locked by another run (remove {LOCK_FILE} if stale)", dir.display()),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_train(c: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(c, None)?;
    let threads = threads_from_env()?;
    let _lock = DirLock::acquire(&cfg.out)?;
    let sets = Datasets::generate(&cfg)?;
    let run = train::train(&cfg, &sets, threads)?;
    train::write_run(&cfg.out, &cfg, &run)?;
    let s = run.final_eval.summary();
    let _ = writeln!(
        out,
        "{} seed={} params={} miou={:.4} bmiou={:.4} out={}",
        cfg.arch,
        cfg.seed,
        run.model.param_count(),
        s.miou,
        s.bmiou_mean,
        cfg.out.display()
    );
    Ok(())
}

fn checkpoint_dir(cfg: &ExperimentConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT_DIR))
}

fn fallback_config(c: &Common, checkpoint: &Option<PathBuf>) -> Option<PathBuf> {
    match (checkpoint, &c.out) {
        (Some(ck), _) => ck.parent().map(|p| p.join(CONFIG_FILE)),
        (None, Some(o)) => Some(o.join(CONFIG_FILE)),
        (None, None) => None,
    }
}

fn cmd_eval(c: &Common, checkpoint: &Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(c, fallback_config(c, checkpoint).as_deref())?;
    let threads = threads_from_env()?;
    let model = train::load_model(&cfg, &checkpoint_dir(&cfg, checkpoint))?;
    let _lock = DirLock::acquire(&cfg.out)?;
    let sets = Datasets::generate(&cfg)?;
    let acc = train::evaluate(&model, &sets.eval, threads)?;
    write_file(&cfg.out.join(EVAL_FILE), &acc.report_csv())?;
    let s = acc.summary();
    let _ = writeln!(
        out,
        "{} miou={:.4} bmiou_1={:.4} bmiou_2={:.4} bmiou_3={:.4}",
        cfg.arch, s.miou, s.bmiou[0], s.bmiou[1], s.bmiou[2]
    );
    Ok(())
}

pub const COMPARE_HEADER: &str = "arch,params,miou,bmiou_1,bmiou_2,bmiou_3,bmiou_mean,mean_offset";

fn cmd_compare(c: &Common, archs: &[String], out: &mut dyn Write) -> Result<()> {
    let base = resolve_config(c, None)?;
    let archs: Vec<Arch> = archs.iter().map(|a| a.trim().parse()).collect::<Result<_>>()?;
    if archs.len() < 2 {
        return Err(Error::config("archs", "compare needs at least two architectures"));
    }
    let threads = threads_from_env()?;
    let _lock = DirLock::acquire(&base.out)?;
    let sets = Datasets::generate(&base)?;
    let checksum = sets.checksum();
    let _ = writeln!(out, "dataset checksum {checksum:016x}");
    let mut table = format!("{COMPARE_HEADER}\n");
    for arch in archs {
        let mut cfg = base.clone();
        cfg.arch = arch;
        cfg.out = base.out.join(arch.name());
        let run = train::train(&cfg, &sets, threads)?;
        train::write_run(&cfg.out, &cfg, &run)?;
        let s = run.final_eval.summary();
        let offset = train::mean_offset_magnitude(&run.model, &sets.eval)?;
        let row = format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            arch,
            run.model.param_count(),
            s.miou,
            s.bmiou[0],
            s.bmiou[1],
            s.bmiou[2],
            s.bmiou_mean,
            offset
        );
        let _ = write!(out, "{row}");
        table.push_str(&row);
    }
    write_file(&base.out.join(COMPARE_FILE), &table)?;
    Ok(())
}

fn cmd_gradcheck(op: &str, seed: u64, tol: Option<f64>, out: &mut dyn Write) -> Result<bool> {
    let tol = tol.unwrap_or_else(|| checks::default_tolerance(op));
    let report = checks::run(op, seed)?;
    for (name, r) in &report.slots {
        let _ = writeln!(
            out,
            "{op} seed={seed} slot={name} checked={} kinks={} max_rel_err={:.3e} max_abs_err={:.3e}",
            r.checked, r.kinks, r.max_rel_err, r.max_abs_err
        );
    }
    let ok = report.passed(tol);
    let _ = writeln!(
        out,
        "{} {op} worst={:.3e} tol={tol:.1e} checked={} kinks={}",
        if ok { "PASS" } else { "FAIL" },
        report.worst(),
        report.checked(),
        report.kinks()
    );
    Ok(ok)
}

pub const OFFSETS_HEADER: &str = "level,mean_abs,max_abs,per_tap_mean";

fn cmd_export(c: &Common, checkpoint: &Option<PathBuf>, sample: usize, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(c, fallback_config(c, checkpoint).as_deref())?;
    let model = train::load_model(&cfg, &checkpoint_dir(&cfg, checkpoint))?;
    let _lock = DirLock::acquire(&cfg.out)?;
    let sets = Datasets::generate(&cfg)?;
    let s = sets.eval.get(sample).ok_or_else(|| {
        Error::config("sample", format!("index {sample} outside eval set of {}", sets.eval.len()))
    })?;
    let dir = cfg.out.join(EXPORT_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pred = model.predict(&s.image)?;
    pgm::write_label(&dir.join("pred.pgm"), &pred, cfg.classes)?;
    pgm::write_label(&dir.join("gt.pgm"), &s.label, cfg.classes)?;
    for n in BAND_WIDTHS {
        let band = boundary_band(&s.label, n)?;
        pgm::write(
            &dir.join(format!("band_n{n}.pgm")),
            band.height,
            band.width,
            &pgm::mask_pixels(&band.mask),
        )?;
    }
    let mut csv = format!("{OFFSETS_HEADER}\n");
    for (level, st) in train::offset_report(&model, &s.image)? {
        let taps: Vec<String> = st.per_tap_mean.iter().map(|v| format!("{v:.6}")).collect();
        csv.push_str(&format!("{level},{:.6},{:.6},{}\n", st.mean_abs, st.max_abs, taps.join(";")));
    }
    write_file(&dir.join("offsets.csv"), &csv)?;
    let _ = writeln!(out, "exported sample {sample} to {}", dir.display());
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c, out),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint, out),
        Command::Compare { common, archs } => cmd_compare(common, archs, out),
        Command::Gradcheck { op, seed, tol } => match cmd_gradcheck(op, *seed, *tol, out) {
            Ok(true) => Ok(()),
            Ok(false) => return EXIT_NUMERIC,
            Err(e) => Err(e),
        },
        Command::Export {
            common,
            checkpoint,
            sample,
        } => cmd_export(common, checkpoint, *sample, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
