//! `lgvit`: dataset generation, pretraining, dense fine-tuning and
//! checkpoint inspection from one config file.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! when a command fails at run time.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lgvit_core::checkpoint::{inspect, Checkpoint};
use lgvit_core::config::RunConfig;
use lgvit_core::data::{generate_shapes, DatasetManifest, Sample, SyntheticShapesSpec};
use lgvit_core::engine::{pretrain, Pretrainer, RunOutput};
use lgvit_core::finetune::{evaluate, finetune, load_finetuned, Task};
use lgvit_core::image::Image;
use lgvit_core::Error;

#[derive(Parser)]
#[command(name = "lgvit", version, about = "Local-to-global contrastive ViT pretraining on synthetic shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (flat TOML sections).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.epochs=1`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set io.checkpoint=PATH`.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic shapes dataset (train and val splits).
    GenData(Common),
    /// Contrastive pretraining; resumes when a checkpoint is given.
    Pretrain(Common),
    /// Fine-tune a segmentation head, from a pretraining checkpoint or random init.
    FinetuneSeg(Common),
    /// Fine-tune a depth head, from a pretraining checkpoint or random init.
    FinetuneDepth(Common),
    /// Score a fine-tuned checkpoint on the validation split.
    Eval(Common),
    /// Print a checkpoint's tensor table and CRC status.
    InspectCkpt {
        path: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `lgvit --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut overrides = common.overrides.clone();
    if let Some(ck) = &common.checkpoint {
        overrides.push(format!("io.checkpoint={}", toml_string(&ck.display().to_string())));
    }
    RunConfig::load(common.config.as_deref(), &overrides).map_err(|e| Failure::Usage(e.to_string()))
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(c) => gen_data(&resolve(&c)?),
        Command::Pretrain(c) => run_pretrain(&resolve(&c)?),
        Command::FinetuneSeg(c) => run_finetune(&resolve(&c)?, Task::Seg),
        Command::FinetuneDepth(c) => run_finetune(&resolve(&c)?, Task::Depth),
        Command::Eval(c) => run_eval(&resolve(&c)?),
        Command::InspectCkpt { path } => inspect_ckpt(&path),
    }
}

fn gen_data(cfg: &RunConfig) -> Result<(), Failure> {
    let dir = &cfg.data.out_dir;
    let train = generate_shapes(&cfg.data.shapes, dir, "train")?;
    let val_spec = SyntheticShapesSpec {
        count: cfg.data.val_count,
        ..cfg.data.shapes.clone()
    };
    let val = generate_shapes(&val_spec, dir, "val")?;
    println!(
        "wrote {} train and {} val samples to {}",
        train.len(),
        val.len(),
        dir.display()
    );
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<Sample>, Failure> {
    let manifest = DatasetManifest::load(path)?;
    if manifest.is_empty() {
        return Err(Failure::Runtime(Error::EmptyDataset));
    }
    Ok(manifest.load_all()?)
}

fn run_pretrain(cfg: &RunConfig) -> Result<(), Failure> {
    let trainer = match &cfg.io.checkpoint {
        Some(path) => {
            let t = Pretrainer::from_checkpoint(&Checkpoint::load(path)?)?;
            log::info!("resuming {} at step {}", path.display(), t.step);
            t
        }
        None => Pretrainer::new(cfg.pretrain_config()?)?,
    };
    let images: Vec<Image> = load_samples(&cfg.data.train_manifest())?
        .into_iter()
        .map(|s| s.image)
        .collect();
    let output = RunOutput {
        out_dir: Some(cfg.io.out_dir.clone()),
        max_steps: None,
    };
    let outcome = pretrain(trainer, &images, &output)?;
    let means = outcome.epoch_means();
    println!(
        "pretrained {} steps; epoch mean loss {} -> {}; checkpoint {}",
        outcome.trainer.step,
        means.first().map_or("n/a".into(), |m| format!("{m:.4}")),
        means.last().map_or("n/a".into(), |m| format!("{m:.4}")),
        cfg.io.out_dir.join("last.dckp").display()
    );
    Ok(())
}

fn run_finetune(cfg: &RunConfig, task: Task) -> Result<(), Failure> {
    let ft = cfg.finetune_config(task)?;
    let pretrained = cfg.io.checkpoint.as_ref().map(Checkpoint::load).transpose()?;
    if pretrained.is_none() {
        log::info!("no checkpoint given; fine-tuning from random initialisation");
    }
    let train = load_samples(&cfg.data.train_manifest())?;
    let val = load_samples(&cfg.data.val_manifest())?;
    let outcome = finetune(&ft, pretrained.as_ref(), &train, &val)?;
    let dir = &cfg.io.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let ck_path = dir.join(format!("{}.dckp", task.name()));
    outcome.checkpoint.save(&ck_path)?;
    write_report(&dir.join(format!("{}_report.tsv", task.name())), &outcome.report.to_string())?;
    print!("{}", outcome.report);
    log::info!("saved {}", ck_path.display());
    Ok(())
}

fn write_report(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| {
        Failure::Runtime(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn run_eval(cfg: &RunConfig) -> Result<(), Failure> {
    let path = cfg
        .io
        .checkpoint
        .as_ref()
        .ok_or_else(|| Failure::Usage("eval needs a checkpoint (--checkpoint or io.checkpoint)".into()))?;
    let model = load_finetuned(&Checkpoint::load(path)?)?;
    let val = load_samples(&cfg.data.val_manifest())?;
    let report = evaluate(&model, &val, cfg.finetune.batch_size)?;
    if let Some(out) = &cfg.io.report {
        write_report(out, &report.to_string())?;
    }
    print!("{report}");
    Ok(())
}

fn inspect_ckpt(path: &Path) -> Result<(), Failure> {
    let info = inspect(path)?;
    let mut out = String::new();
    let _ = writeln!(out, "file\t{}", path.display());
    let _ = writeln!(out, "version\t{}", info.version);
    let _ = writeln!(out, "kind\t{}", checkpoint_kind(&info.config_json));
    let _ = writeln!(out, "tensors\t{}", info.entries.len());
    out.push_str("name\tshape\tnumel\n");
    for e in &info.entries {
        let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        let numel = e.shape.iter().product::<usize>();
        let _ = writeln!(out, "{}\t[{}]\t{}", e.name, dims.join(","), numel);
    }
    let ok = info.crc_ok();
    if ok {
        let _ = writeln!(out, "crc\tok ({:08x})", info.stored_crc);
    } else {
        let _ = writeln!(
            out,
            "crc\tMISMATCH (stored {:08x}, computed {:08x})",
            info.stored_crc, info.computed_crc
        );
    }
    // ignore a reader that hung up early, e.g. `| head`
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::CorruptCheckpoint("CRC mismatch".into())))
    }
}

fn checkpoint_kind(config_json: &str) -> String {
    serde_json::from_str::<serde_json::Value>(config_json)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string))
        .unwrap_or_else(|| "unknown".into())
}
