//! Command-line interface: `synth`, `train`, `eval`, `experts`, `budget`.
//!
//! Exit codes are a stable contract: 0 success, 2 I/O or data format
//! problems, 3 configuration errors (including bad arguments), 4 checkpoint
//! mismatches, 1 anything else.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::config::{ModelConfig, RunConfig};
use crate::encoder::tunable_budget;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, expert_stats, TrackerKind};
use crate::learning::{smoothed_endpoints, train, write_loss_log};
use crate::model::Model;
use crate::synthdata::{make_desk_dataset, read_dataset, write_dataset, Sequence};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pctrack", version, about = "Point-cloud single-object tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Heldout,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrackerArg {
    Model,
    Oracle,
    Static,
    Cv,
}

impl From<TrackerArg> for TrackerKind {
    fn from(t: TrackerArg) -> Self {
        match t {
            TrackerArg::Model => TrackerKind::Model,
            TrackerArg::Oracle => TrackerKind::Oracle,
            TrackerArg::Static => TrackerKind::Static,
            TrackerArg::Cv => TrackerKind::ConstantVelocity,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Train on the `train` split and write a checkpoint plus loss CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run config JSON; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss log path; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Track a split and write the evaluation report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Required for the model tracker.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "model")]
        tracker: TrackerArg,
        /// Shorthand for `--tracker oracle`.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum, default_value = "heldout")]
        split: Split,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write the expert-activation histogram as CSV.
    Experts {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "heldout")]
        split: Split,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the tunable-parameter budget of a config.
    Budget {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the large preset instead of the config's model section.
        #[arg(long)]
        full_scale: bool,
    },
}

/// Maps a library error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Config(_) => EXIT_CONFIG,
        Error::Checkpoint { .. } => EXIT_CHECKPOINT,
        _ => EXIT_OTHER,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// printing to stdout/stderr. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn read_split(data: &Path, split: Split) -> Result<Vec<Sequence>> {
    let ds = read_dataset(data)?;
    let seqs = match split {
        Split::Train => ds.train,
        Split::Heldout => ds.heldout,
    };
    if seqs.is_empty() {
        return Err(Error::io(
            data,
            std::io::Error::new(std::io::ErrorKind::NotFound, "split has no sequences"),
        ));
    }
    Ok(seqs)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { out, seed, preset } => {
            let Preset::Desk = preset;
            let ds = make_desk_dataset(seed)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {} sequences ({} train, {} heldout) to {}",
                ds.train.len() + ds.heldout.len(),
                ds.train.len(),
                ds.heldout.len(),
                out.display()
            );
        }
        Command::Train { data, config, out, log } => {
            let cfg = load_run_config(config.as_deref())?;
            let seqs = read_split(&data, Split::Train)?;
            let mut model = Model::new(cfg.model.clone())?;
            let steps = cfg.train.steps;
            let log_lines = train(&mut model, &seqs, &cfg.train, |l| {
                if l.step % 50 == 0 || l.step + 1 == steps {
                    eprintln!("step {:>5}  loss {:.4}", l.step, l.loss);
                }
            })?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            checkpoint::save(&model, &out)?;
            let log_path = log.unwrap_or_else(|| out.with_extension("loss.csv"));
            let mut w = create(&log_path)?;
            write_loss_log(&log_lines, &mut w).map_err(|e| Error::io(&log_path, e))?;
            w.flush().map_err(|e| Error::io(&log_path, e))?;
            if let Some((first, last)) = smoothed_endpoints(&log_lines, 50) {
                println!("smoothed loss {first:.4} -> {last:.4}");
            }
            println!("checkpoint {}", out.display());
        }
        Command::Eval {
            data,
            ckpt,
            report,
            tracker,
            oracle,
            split,
            jobs,
        } => {
            let kind = if oracle { TrackerKind::Oracle } else { tracker.into() };
            let model = match (kind, ckpt) {
                (TrackerKind::Model, None) => {
                    return Err(Error::Config("--ckpt is required for the model tracker".into()))
                }
                (_, Some(p)) => Some(checkpoint::load(&p)?),
                (_, None) => None,
            };
            let seqs = read_split(&data, split)?;
            let r = evaluate(model.as_ref(), &seqs, kind, jobs)?;
            let mut w = create(&report)?;
            w.write_all(r.to_json().as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&report, e))?;
            println!("{}: success {:.2} precision {:.2}", r.tracker, r.mean.success, r.mean.precision);
            for (cat, m) in &r.categories {
                println!("  {cat:<12} success {:6.2} precision {:6.2}", m.success, m.precision);
            }
        }
        Command::Experts {
            data,
            ckpt,
            out,
            split,
            jobs,
        } => {
            let model = checkpoint::load(&ckpt)?;
            let seqs = read_split(&data, split)?;
            let hist = expert_stats(&model, &seqs, jobs)?;
            let mut w = create(&out)?;
            hist.write_csv(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&out, e))?;
            println!("wrote {} histogram rows to {}", hist.rows().len(), out.display());
        }
        Command::Budget { config, full_scale } => {
            let model_cfg = if full_scale {
                ModelConfig::full_scale()
            } else {
                load_run_config(config.as_deref())?.model
            };
            model_cfg.validate()?;
            let b = tunable_budget(&model_cfg)?;
            println!("adapters        {}", b.adapters);
            println!("experts         {}", b.moge);
            println!("temporal token  {}", b.temporal_token);
            println!("mask weights    {}", b.mask_weights);
            println!("embedding       {}", b.embedding);
            println!("head            {}", b.head);
            println!("backbone        {}", b.backbone);
            println!("total           {}", b.total());
        }
    }
    Ok(())
}
