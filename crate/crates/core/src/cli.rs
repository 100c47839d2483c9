//! The `cdaseg` command line.
//!
//! Every subcommand starts from the default [`ExperimentConfig`], applies
//! `--config`, then each `--set key=value` in order, then `--seed`. Without
//! `--data` the splits are regenerated in memory from the config, which is
//! deterministic, so `gen` is only needed to inspect or reuse the images.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::eval::{
    evaluate_masks, evaluate_model, fmt_g6, prepare_with, run_ablation_with, table1_with,
    ExperimentConfig, Metrics, Prepared, ReportTable,
};
use crate::raster::{load_mask, Dataset};
use crate::scenegen::class_name;
use crate::segnet::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::segnet::{load_checkpoint, save_checkpoint, InferredProperties, Regime};

#[derive(Parser, Debug)]
#[command(
    name = "cdaseg",
    version,
    about = "Curriculum domain adaptation for semantic segmentation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Read the splits written by `gen` instead of regenerating them.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the source, target and val splits.
    Gen {
        /// Output root (default `<output.dir>/data`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one regime and write a checkpoint.
    Train {
        /// noadapt, i, sp or i+sp.
        #[arg(long, default_value = "i+sp")]
        regime: Regime,
        /// Checkpoint path (default `<output.dir>/<regime>.ckpt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the estimated label distribution of every image of a split.
    InferDist {
        #[arg(long, default_value = "target")]
        split: SplitArg,
        /// Output file (default `<output.dir>/dists_<split>.txt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write superpixel maps and landmark lists of a split.
    Superpix {
        #[arg(long, default_value = "target")]
        split: SplitArg,
        /// Output directory (default `<output.dir>/superpix_<split>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint or a directory of predicted masks on the val split.
    Eval {
        #[arg(
            long,
            conflicts_with = "predictions",
            required_unless_present = "predictions"
        )]
        checkpoint: Option<PathBuf>,
        /// Directory of `lab_%05d.pgm` masks named by val item id.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train all regimes and write the ablation table.
    Ablation {
        /// Report directory (default `<output.dir>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the label-distribution estimation table.
    Table1 {
        /// Report directory (default `<output.dir>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        probes: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SplitArg {
    Target,
    Val,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Target => "target",
            SplitArg::Val => "val",
        }
    }
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(g: &GlobalArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &g.set {
        let Some((key, value)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {kv:?}");
        };
        cfg.set(key.trim(), value)?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn splits(cfg: &ExperimentConfig, data: Option<&Path>) -> anyhow::Result<[Dataset; 3]> {
    Ok(match data {
        Some(root) => [
            cfg.load_split(root, 0)?,
            cfg.load_split(root, 1)?,
            cfg.load_split(root, 2)?,
        ],
        None => cfg.generate_all()?,
    })
}

fn prepared(cfg: &ExperimentConfig, data: Option<&Path>) -> anyhow::Result<Prepared> {
    let [source, target, val] = splits(cfg, data)?;
    Ok(prepare_with(cfg, source, target.without_masks(), val)?)
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn split_props(prep: &Prepared, split: SplitArg) -> (&Dataset, &[InferredProperties]) {
    match split {
        SplitArg::Target => (&prep.target, &prep.target_props),
        SplitArg::Val => (&prep.val, &prep.val_props),
    }
}

fn print_metrics(m: &Metrics) {
    println!("mean_iou {}", fmt_g6(m.mean_iou));
    for (c, v) in m.per_class_iou.iter().enumerate() {
        println!("iou.{} {}", class_name(c), fmt_g6(*v));
    }
}

fn write_report(dir: &Path, stem: &str, table: &ReportTable) -> anyhow::Result<()> {
    write(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
    write(&dir.join(format!("{stem}.txt")), &table.to_text())
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let cfg = load_config(&cli.global)?;
    let data = cli.global.data.as_deref();
    match cli.command {
        Command::Gen { out } => {
            let root = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            let all = cfg.generate_all()?;
            cfg.save_splits(&root, &all)?;
            write(&root.join("config.txt"), &cfg.to_text())?;
            println!("wrote {}", root.display());
        }
        Command::Train { regime, out } => {
            let prep = prepared(&cfg, data)?;
            let outcome = prep.train_outcome(regime)?;
            for rec in &outcome.history {
                println!(
                    "epoch {} total {} source {} target {}",
                    rec.epoch + 1,
                    fmt_g6(rec.terms.total),
                    fmt_g6(rec.terms.source),
                    fmt_g6(rec.terms.target)
                );
            }
            let path = out.unwrap_or_else(|| cfg.output_dir.join(format!("{regime}.ckpt")));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            save_checkpoint(&path, &outcome.model, &outcome.state)?;
            println!("wrote {}", path.display());
        }
        Command::InferDist { split, out } => {
            let prep = prepared(&cfg, data)?;
            let (ds, props) = split_props(&prep, split);
            let mut text = String::new();
            for (item, p) in ds.items.iter().zip(props) {
                text.push_str(&item.id.to_string());
                for v in p.image_dist.probs() {
                    text.push(' ');
                    text.push_str(&fmt_g6(*v));
                }
                text.push('\n');
            }
            let path =
                out.unwrap_or_else(|| cfg.output_dir.join(format!("dists_{}.txt", split.name())));
            write(&path, &text)?;
            println!("wrote {}", path.display());
        }
        Command::Superpix { split, out } => {
            let prep = prepared(&cfg, data)?;
            let (ds, props) = split_props(&prep, split);
            let dir =
                out.unwrap_or_else(|| cfg.output_dir.join(format!("superpix_{}", split.name())));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (item, p) in ds.items.iter().zip(props) {
                let map = dir.join(format!("sp_{:05}.pgm", item.id));
                fs::write(&map, p.partition.encode_pgm()?)
                    .with_context(|| format!("writing {}", map.display()))?;
                let mut text = String::from("# superpixel class confidence\n");
                for l in &p.landmarks.entries {
                    text.push_str(&format!(
                        "{} {} {}\n",
                        l.superpixel,
                        l.class,
                        fmt_g6(l.confidence)
                    ));
                }
                write(&dir.join(format!("landmarks_{:05}.txt", item.id)), &text)?;
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval {
            checkpoint,
            predictions,
        } => {
            let [_, _, val] = splits(&cfg, data)?;
            let metrics = match (checkpoint, predictions) {
                (Some(path), _) => {
                    let (model, _) = load_checkpoint(&path)?;
                    evaluate_model(&model, &val)?
                }
                (None, Some(dir)) => {
                    let preds = val
                        .items
                        .iter()
                        .map(|s| {
                            load_mask(dir.join(format!("lab_{:05}.pgm", s.id)), val.num_classes)
                        })
                        .collect::<crate::Result<Vec<_>>>()?;
                    evaluate_masks(&preds, &val)?
                }
                (None, None) => bail!("eval needs --checkpoint or --predictions"),
            };
            print_metrics(&metrics);
        }
        Command::Ablation { out } => {
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let prep = prepared(&cfg, data)?;
            let csv = dir.join("ablation.csv");
            // rewritten after every row so a failure leaves the finished rows
            let outcome = run_ablation_with(&prep, None, &mut |t| {
                write(&csv, &t.to_csv())
                    .map_err(|e| crate::Error::InvalidArgument(format!("{e:#}")))
            })?;
            write_report(&dir, "ablation", &outcome.table)?;
            print!("{}", outcome.table.to_text());
        }
        Command::Table1 { out } => {
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let prep = prepared(&cfg, data)?;
            let noadapt = prep.train(Regime::NoAdapt)?;
            let table = table1_with(&prep, &noadapt)?;
            write_report(&dir, "table1", &table)?;
            print!("{}", table.to_text());
        }
        Command::Gradcheck { probes } => {
            let mut gcfg = GradcheckConfig::default();
            if let Some(n) = probes {
                gcfg.probes = n;
            }
            let report = run_gradcheck(cfg.seed, &gcfg)?;
            for (i, p) in report.probes.iter().enumerate() {
                println!(
                    "probe {i} regime {} gamma {} max_rel_err {} kinks_skipped {}",
                    p.regime,
                    fmt_g6(p.gamma),
                    fmt_g6(p.max_rel_err()),
                    p.kinks_skipped
                );
            }
            println!("max relative error {}", fmt_g6(report.max_rel_err()));
            if !report.passed() {
                eprintln!(
                    "gradient check failed: tolerance {}",
                    fmt_g6(report.tolerance)
                );
                return Ok(1);
            }
        }
    }
    Ok(0)
}
