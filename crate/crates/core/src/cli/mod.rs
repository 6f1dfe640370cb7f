//! Command-line driver. Every command validates and echoes its resolved
//! configuration to `<out>/config.json` before doing any work.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_model, evaluate_motions, fidj_csv, mahalanobis_fidj, MetricReport, MethodPoint, OutlierRule,
    Reference,
};
use crate::motion_data::io::{manifest_path, read_motion_set};
use crate::motion_data::{generate_synthetic_dataset, read_dataset, write_dataset, ConditionId, Dataset, GeneratorSpec};
use crate::predictor::{read_checkpoint, write_checkpoint, Model};
use crate::rng;
use crate::sampler::{generate_batch, write_generated};
use crate::trainer::{run_ablation, train_with_progress, write_loss_csv};

pub use config::{RunConfig, SweepAxis};

pub const CHECKPOINT_FILE: &str = "checkpoint.fmck";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "cfm-motion", version, about = "Flow-matching motion generation: data, training, sampling and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.steps=2000`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Master seed, applied to the dataset, training, sampling and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into `<out>/train` and `<out>/test`.
    DatasetGen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a predictor on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (its `train` split when present).
        #[arg(long)]
        data: PathBuf,
        /// Shorthand for `--set train.steps=N`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample motions from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prompt to sample; repeatable. Defaults to every prompt.
        #[arg(long)]
        prompt: Vec<String>,
        /// Samples per prompt.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Evaluate a checkpoint or a directory of motions against a reference set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file or motion directory with a manifest.
        #[arg(long)]
        target: PathBuf,
        /// Reference dataset directory (its `test` split when present).
        #[arg(long)]
        data: PathBuf,
    },
    /// Train both objectives for every seed and compare them.
    Ablation {
        #[command(flatten)]
        common: Common,
        /// Dataset directory holding `train` and `test` splits.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint across sampling steps or guidance scales.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference dataset directory (its `test` split when present).
        #[arg(long)]
        data: PathBuf,
        /// Shorthand for `--set sweep.axis=...`.
        #[arg(long, value_parser = ["steps", "guidance"])]
        axis: Option<String>,
        /// Shorthand for `--set sweep.values=[...]`, comma-separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Draw joint trajectories of motion files or motion directories as SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Mahalanobis FID-Jitter distances from a `method,fid,jitter` CSV.
    Fidj {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        points: PathBuf,
        /// Row of the CSV holding the ground-truth point.
        #[arg(long, default_value = "GT")]
        ground_truth: String,
        #[arg(long, value_parser = ["mahalanobis", "mad", "none"], default_value = "mad")]
        rule: String,
    },
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code: 0 on success, 1 for usage or configuration errors, 2 for runtime
/// failures. Failures print one JSON line to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let line = serde_json::json!({"error": e.kind(), "exit_code": code, "message": e.to_string()});
            eprintln!("{line}");
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

fn resolve(common: &Common, extra: Vec<String>) -> Result<RunConfig> {
    let mut sets = common.set.clone();
    sets.extend(extra);
    let config = RunConfig::resolve(common.config.as_deref(), &sets, common.seed)?;
    create_dir(&common.out)?;
    write_file(&common.out.join(CONFIG_FILE), config.to_json()?.as_bytes())?;
    Ok(config)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `dir/split` when it holds a manifest, else `dir` itself.
fn split_dir(dir: &Path, split: &str) -> PathBuf {
    let sub = dir.join(split);
    if manifest_path(&sub).is_file() {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::DatasetGen { common } => {
            let config = resolve(&common, vec![])?;
            dataset_gen(&config, &common.out)
        }
        Command::Train { common, data, steps } => {
            let config = resolve(&common, steps.map(|s| format!("train.steps={s}")).into_iter().collect())?;
            train_cmd(&config, &data, &common.out)
        }
        Command::Sample {
            common,
            checkpoint,
            prompt,
            count,
        } => {
            if count == 0 {
                return Err(Error::InvalidConfig("--count must be at least 1".into()));
            }
            let config = resolve(&common, vec![])?;
            sample_cmd(&config, &checkpoint, &prompt, count, &common.out)
        }
        Command::Evaluate { common, target, data } => {
            let config = resolve(&common, vec![])?;
            evaluate_cmd(&config, &target, &data, &common.out)
        }
        Command::Ablation { common, data } => {
            let config = resolve(&common, vec![])?;
            ablation_cmd(&config, &data, &common.out)
        }
        Command::Sweep {
            common,
            checkpoint,
            data,
            axis,
            values,
        } => {
            let mut extra: Vec<String> = axis.map(|a| format!("sweep.axis={a}")).into_iter().collect();
            if !values.is_empty() {
                extra.push(format!("sweep.values={}", serde_json::to_string(&values)?));
            }
            let config = resolve(&common, extra)?;
            sweep_cmd(&config, &checkpoint, &data, &common.out)
        }
        Command::Plot { common, inputs } => {
            let config = resolve(&common, vec![])?;
            plot_cmd(&config, &inputs, &common.out)
        }
        Command::Fidj {
            common,
            points,
            ground_truth,
            rule,
        } => {
            resolve(&common, vec![])?;
            let rule = match rule.as_str() {
                "mahalanobis" => OutlierRule::Mahalanobis,
                "mad" => OutlierRule::MadZScore,
                _ => OutlierRule::None,
            };
            fidj_cmd(&points, &ground_truth, rule, &common.out)
        }
    }
}

/// The train split uses the master seed and the test split an independent
/// sub-seed.
pub fn generate_splits(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let train = generate_synthetic_dataset(&config.dataset, config.seed)?;
    let test_spec = GeneratorSpec {
        sequences_per_family: config.test_sequences_per_family,
        ..config.dataset.clone()
    };
    let test = generate_synthetic_dataset(&test_spec, rng::sub_seed(config.seed, 1))?;
    Ok((train, test))
}

fn dataset_gen(config: &RunConfig, out: &Path) -> Result<()> {
    let (train, test) = generate_splits(config)?;
    write_dataset(&train, out.join("train"))?;
    write_dataset(&test, out.join("test"))?;
    println!("wrote {} training and {} test motions to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn train_cmd(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset = read_dataset(split_dir(data, "train"))?;
    let run = train_with_progress(&dataset, &config.predictor, &config.train, |step, loss| {
        eprintln!("step {step} loss {loss:.6}");
    })?;
    write_checkpoint(&run.model, out.join(CHECKPOINT_FILE))?;
    write_loss_csv(&run.losses, config.train.log_every, out.join("loss.csv"))?;
    run.into_model()?;
    println!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn sample_cmd(config: &RunConfig, checkpoint: &Path, prompts: &[String], count: usize, out: &Path) -> Result<()> {
    let model = read_checkpoint(checkpoint)?;
    let vocab = model.header.vocab()?;
    let ids: Vec<ConditionId> = if prompts.is_empty() {
        vocab.ids().collect()
    } else {
        prompts
            .iter()
            .map(|p| {
                vocab
                    .id_of(p)
                    .ok_or_else(|| Error::InvalidConfig(format!("prompt {p:?} is not in the model's vocabulary")))
            })
            .collect::<Result<_>>()?
    };
    let requests: Vec<(ConditionId, usize)> = ids.into_iter().map(|c| (c, count)).collect();
    let samples = generate_batch(&model, &requests, &config.sample)?;
    write_generated(&samples, &config.sample, out)?;
    println!("wrote {} motions to {}", samples.len(), out.display());
    Ok(())
}

fn reference(config: &RunConfig, data: &Path) -> Result<(Dataset, Reference)> {
    let dataset = read_dataset(split_dir(data, "test"))?;
    let reference = Reference::new(&dataset, &config.eval.embedder)?;
    Ok((dataset, reference))
}

fn evaluate_target(config: &RunConfig, target: &Path, dataset: &Dataset, reference: &Reference) -> Result<MetricReport> {
    if target.is_file() && !target.ends_with(crate::motion_data::io::MANIFEST_FILE) {
        let model = read_checkpoint(target)?;
        return evaluate_model(reference, &model, &config.sample, &config.eval);
    }
    let (entries, motions) = read_motion_set(target)?;
    let conditions = entries
        .iter()
        .map(|e| {
            dataset
                .vocab
                .id_of(&e.prompt)
                .ok_or_else(|| Error::InvalidInput(format!("prompt {:?} is not in the reference set", e.prompt)))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_motions(reference, &motions, &conditions, &config.eval)
}

fn evaluate_cmd(config: &RunConfig, target: &Path, data: &Path, out: &Path) -> Result<()> {
    let (dataset, reference) = reference(config, data)?;
    let report = evaluate_target(config, target, &dataset, &reference)?;
    report.write(out, "metrics")?;
    print!("{}", summary_table(&report));
    Ok(())
}

fn summary_table(report: &MetricReport) -> String {
    report
        .metrics
        .iter()
        .map(|(k, m)| format!("{k:<20} {:>12.6} ± {:.6} ({} trials)\n", m.mean, m.std, m.trials))
        .collect()
}

fn ablation_cmd(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let train = read_dataset(split_dir(data, "train"))?;
    let test = read_dataset(split_dir(data, "test"))?;
    let run = run_ablation(
        &train,
        &test,
        &config.predictor,
        &config.train,
        &config.ablation.seeds,
        &config.sample,
        &config.eval,
    )?;
    for arm in &run.arms {
        let dir = out.join("arms").join(format!("{}_seed{}", crate::trainer::arm_name(arm.objective), arm.seed));
        create_dir(&dir)?;
        write_checkpoint(&arm.model, dir.join(CHECKPOINT_FILE))?;
        write_loss_csv(&arm.losses, config.train.log_every, dir.join("loss.csv"))?;
        arm.report.write(&dir, "metrics")?;
    }
    write_file(&out.join("ablation.csv"), run.to_csv().as_bytes())?;
    print!("{}", run.to_csv());
    Ok(())
}

/// `(value, report)` for every sweep value, all sharing the evaluation seed.
pub fn sweep(config: &RunConfig, model: &Model, reference: &Reference) -> Result<Vec<(f64, MetricReport)>> {
    config.sweep.validate()?;
    config
        .sweep
        .values
        .iter()
        .map(|&v| {
            let mut sample = config.sample.clone();
            match config.sweep.axis {
                SweepAxis::Steps => sample.steps = v as usize,
                SweepAxis::Guidance => sample.guidance_scale = v,
            }
            Ok((v, evaluate_model(reference, model, &sample, &config.eval)?))
        })
        .collect()
}

fn sweep_cmd(config: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = read_checkpoint(checkpoint)?;
    let (_, reference) = reference(config, data)?;
    let rows = sweep(config, &model, &reference)?;
    let jkey = config.eval.jitter_key();
    let axis = match config.sweep.axis {
        SweepAxis::Steps => "steps",
        SweepAxis::Guidance => "guidance",
    };
    let mut csv = format!("{axis},fid,{jkey}\n");
    let mut fid = Vec::new();
    let mut jit = Vec::new();
    for (v, r) in &rows {
        fid.push(r.mean("fid")?);
        jit.push(r.mean(jkey)?);
        csv.push_str(&format!("{v},{},{}\n", fid.last().unwrap(), jit.last().unwrap()));
    }
    write_file(&out.join("sweep.csv"), csv.as_bytes())?;
    let plots = out.join("plots");
    create_dir(&plots)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let svg = plot::series_svg(&format!("FID and jitter against {axis}"), axis, &xs, &[("fid", fid), (jkey, jit)]);
    write_file(&plots.join("sweep.svg"), svg.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn plot_cmd(config: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let plots = out.join("plots");
    create_dir(&plots)?;
    let mut count = 0;
    for input in inputs {
        let items: Vec<(String, crate::motion_data::MotionSequence)> = if input.is_dir() {
            let (entries, motions) = read_motion_set(input)?;
            let dir_name = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            entries
                .iter()
                .zip(motions)
                .map(|(e, m)| {
                    let stem = Path::new(&e.motion_path).file_stem().unwrap_or_default().to_string_lossy();
                    (format!("{dir_name}_{stem}"), m)
                })
                .collect()
        } else {
            let stem = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            vec![(stem, crate::motion_data::read_motion_file(input)?)]
        };
        for (name, motion) in items {
            let svg = plot::trajectory_svg(&motion, &config.plot.joints, &name);
            write_file(&plots.join(format!("{name}.svg")), svg.as_bytes())?;
            count += 1;
        }
    }
    println!("wrote {count} plots to {}", plots.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct PointRow {
    method: String,
    fid: f64,
    jitter: f64,
}

/// Parses a CSV with a `method,fid,jitter` header.
pub fn parse_points_csv(text: &str) -> Result<Vec<MethodPoint>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, row) in reader.deserialize::<PointRow>().enumerate() {
        let row = row.map_err(|e| Error::Malformed(format!("points row {}: {e}", i + 1)))?;
        if !(row.fid.is_finite() && row.jitter.is_finite()) {
            return Err(Error::Malformed(format!("points row {}: non-finite value", i + 1)));
        }
        points.push(MethodPoint::new(row.method, row.fid, row.jitter));
    }
    Ok(points)
}

fn fidj_cmd(points: &Path, ground_truth: &str, rule: OutlierRule, out: &Path) -> Result<()> {
    let text = fs::read_to_string(points).map_err(|e| Error::io(points, e))?;
    let mut all = parse_points_csv(&text)?;
    let gt_index = all
        .iter()
        .position(|p| p.name == ground_truth)
        .ok_or_else(|| Error::InvalidConfig(format!("no row named {ground_truth:?}")))?;
    let gt = all.remove(gt_index);
    let entries = mahalanobis_fidj(&all, &gt, rule)?;
    let csv = fidj_csv(&entries);
    write_file(&out.join("fidj.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_csv() {
        let p = parse_points_csv("method,fid,jitter\nA, 0.5, 10\n\nB,1,2\n").unwrap();
        assert_eq!(p, vec![MethodPoint::new("A", 0.5, 10.0), MethodPoint::new("B", 1.0, 2.0)]);
        assert!(parse_points_csv("method,fid,jitter\nA,1").is_err());
        assert!(parse_points_csv("method,fid,jitter\nA,1,NaN").is_err());
        assert!(parse_points_csv("method,fid,jitter\nA,x,1").is_err());
        assert!(parse_points_csv("name,fid,jitter\nA,1,1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 1);
        assert_eq!(exit_code(&Error::Divergence { step: 1, loss: f64::NAN }), 2);
        assert_eq!(run(["cfm-motion", "no-such-command"]), 1);
        assert_eq!(run(["cfm-motion", "--help"]), 0);
    }
}
