//! Command dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use eqprop::mnist::Dataset;
use eqprop::train::{error_rate, init_params, train_from, Precision, TrainConfig, TrainRng};
use eqprop::{LayeredParams, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Params};
use crate::checks::{format_table, gradcheck_suite, stochastic_suite, CheckLine};
use crate::config::{parse_config, Command, RunConfig, Split};
use crate::error::{CliError, CliResult, Context};
use crate::metrics::CsvSink;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.eqp";

/// Stream of the subset draw, kept apart from the training streams.
const SUBSET_STREAM: u64 = 1 << 62;

/// Parses `args` (everything after the program name) and runs the command.
pub fn run_args(args: &[String]) -> CliResult<()> {
    let (command, rest) = args
        .split_first()
        .ok_or_else(|| CliError::Usage("missing command".into()))?;
    let command: Command = command.parse()?;
    let mut overrides = Vec::with_capacity(rest.len());
    let mut config_path: Option<PathBuf> = None;
    let mut it = rest.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let p = it.next().ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
            config_path = Some(p.into());
        } else if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.into());
        } else {
            overrides.push(a.clone());
        }
    }
    let text = match &config_path {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    run(&parse_config(command, text.as_deref(), &overrides)?)
}

pub fn run(config: &RunConfig) -> CliResult<()> {
    match config.command {
        Command::Train => train(config),
        Command::Eval => eval(config),
        Command::Gradcheck => report(gradcheck_suite(
            &config.oracle_topology,
            config.instances,
            config.oracle_seed,
        )?),
        Command::StochasticCheck => report(stochastic_suite(config.grid_points, config.oracle_seed)?),
    }
}

fn report(lines: Vec<CheckLine>) -> CliResult<()> {
    print!("{}", format_table(&lines));
    match lines.iter().filter(|l| !l.passed).count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

/// Loads the IDX files, splits off the validation tail and draws the
/// training subset. The validation split is kept whole.
pub fn load_dataset(config: &RunConfig) -> CliResult<Dataset> {
    let (images, labels) = match (&config.train_images, &config.train_labels) {
        (Some(i), Some(l)) => (i, l),
        _ => return Err(CliError::Usage("train_images and train_labels must be set".into())),
    };
    let full = Dataset::load(images, labels).context(|| format!("loading {}", images.display()))?;
    let full = if config.validation_size > 0 {
        full.with_validation_tail(config.validation_size)
            .map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        full
    };
    let Some(n) = config.subset else {
        return Ok(full);
    };
    let train_len = full.train_indices().len();
    if n > train_len {
        return Err(CliError::Usage(format!(
            "subset of {n} requested but the training split has {train_len} examples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.rng_seed);
    rng.set_stream(SUBSET_STREAM);
    let mut picked = rand::seq::index::sample(&mut rng, train_len, n).into_vec();
    picked.sort_unstable();
    let val: Vec<usize> = full.val_indices().collect();
    let val_len = val.len();
    picked.extend(val);
    let sub = full.subset(&picked);
    if val_len > 0 {
        sub.with_validation_tail(val_len).map_err(|e| CliError::Usage(e.to_string()))
    } else {
        Ok(sub)
    }
}

fn typed<T: Scalar>(p: Params) -> LayeredParams<T> {
    match p {
        Params::F32(p) => p.cast(),
        Params::F64(p) => p.cast(),
    }
}

fn check_topology(config: &RunConfig, ckpt: &Checkpoint, path: &Path) -> CliResult<()> {
    let found = ckpt.params.topology().context(|| format!("checkpoint {}", path.display()))?;
    if found != config.topology {
        return Err(CliError::Usage(format!(
            "checkpoint {} has topology {found}, configured topology is {}",
            path.display(),
            config.topology
        )));
    }
    Ok(())
}

fn train(config: &RunConfig) -> CliResult<()> {
    let dataset = load_dataset(config)?;
    fs::create_dir_all(&config.output_dir).map_err(|e| CliError::io(&config.output_dir, e))?;
    let resumed = match &config.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            check_topology(config, &ckpt, path)?;
            if ckpt.params.precision() != config.train.precision {
                return Err(CliError::Usage(format!(
                    "checkpoint {} is {}, configured precision is {}",
                    path.display(),
                    ckpt.params.precision(),
                    config.train.precision
                )));
            }
            Some(ckpt)
        }
        None => None,
    };
    match config.train.precision {
        Precision::F32 => train_typed::<f32>(config, &dataset, resumed),
        Precision::F64 => train_typed::<f64>(config, &dataset, resumed),
    }
}

fn train_typed<T: Scalar>(config: &RunConfig, dataset: &Dataset, resumed: Option<Checkpoint>) -> CliResult<()> {
    let (params, rng, start) = match resumed {
        Some(c) => (typed::<T>(c.params), TrainRng::from_key(c.rng_key), c.epoch as usize),
        None => (
            init_params::<T>(&config.topology, config.train.rng_seed),
            TrainRng::from_seed(config.train.rng_seed),
            0,
        ),
    };
    let mut sink = CsvSink::create(
        &config.output_dir.join(METRICS_FILE),
        config.output_dir.join(CHECKPOINT_FILE),
        config.train.precision,
        config.resume.is_some(),
    )?;
    println!(
        "training {} on {} examples ({} validation), {} epochs from epoch {start}",
        config.topology,
        dataset.train_indices().len(),
        dataset.val_indices().len(),
        config.train.epochs
    );
    train_from(params, dataset, &config.train, rng, start, &mut sink).context(|| "training".into())?;
    Ok(())
}

fn eval(config: &RunConfig) -> CliResult<()> {
    let path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("eval needs a checkpoint".into()))?;
    let ckpt = Checkpoint::load(path)?;
    check_topology(config, &ckpt, path)?;
    let dataset = load_dataset(config)?;
    let indices: Vec<usize> = match config.split {
        Split::Train => dataset.train_indices().collect(),
        Split::Validation => dataset.val_indices().collect(),
        Split::All => (0..dataset.len()).collect(),
    };
    let rate = eval_params(&ckpt.params, &dataset, &indices, &config.train)?;
    println!(
        "{} error rate {:.4}% on {} examples (epoch {})",
        config.split,
        100.0 * rate,
        indices.len(),
        ckpt.epoch
    );
    Ok(())
}

fn eval_params(params: &Params, dataset: &Dataset, indices: &[usize], config: &TrainConfig) -> CliResult<f64> {
    let what = || "evaluating".to_string();
    match params {
        Params::F32(p) => error_rate(p, dataset, indices, config).context(what),
        Params::F64(p) => error_rate(p, dataset, indices, config).context(what),
    }
}
