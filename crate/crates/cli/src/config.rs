//! `key = value` run configuration with `--key value` overrides.
//!
//! Hyperparameters left unset fall back to the published values for the
//! chosen topology when there are any.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use eqprop::train::{Precision, TrainConfig};
use eqprop::Topology;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Gradcheck,
    StochasticCheck,
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "train" => Ok(Command::Train),
            "eval" => Ok(Command::Eval),
            "gradcheck" => Ok(Command::Gradcheck),
            "stochastic-check" => Ok(Command::StochasticCheck),
            _ => Err(CliError::Usage(format!(
                "unknown command {s:?}; expected train, eval, gradcheck or stochastic-check"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    All,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "all" => Ok(Split::All),
            _ => Err("expected train, validation or all".into()),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub topology: Topology,
    pub train: TrainConfig,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    /// Examples moved from the end of the file into the validation split.
    pub validation_size: usize,
    /// Train on this many examples drawn (seeded) from the training split.
    pub subset: Option<usize>,
    pub output_dir: PathBuf,
    /// Parameters for `eval`.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
    pub split: Split,
    /// Oracle instances drawn by `gradcheck`.
    pub instances: usize,
    pub oracle_seed: u64,
    pub oracle_topology: Topology,
    pub grid_points: usize,
}

/// Every key accepted in a config file or as a flag.
pub const KEYS: &[&str] = &[
    "topology",
    "beta",
    "random_beta_sign",
    "epsilon",
    "free_iters",
    "clamped_iters",
    "learning_rates",
    "minibatch_size",
    "epochs",
    "rng_seed",
    "precision",
    "train_images",
    "train_labels",
    "validation_size",
    "subset",
    "output_dir",
    "checkpoint",
    "resume",
    "split",
    "instances",
    "oracle_seed",
    "oracle_topology",
    "grid_points",
];

/// Where a setting came from, for error messages.
#[derive(Clone, Copy, Debug)]
enum Origin {
    Line(usize),
    Flag,
}

#[derive(Default)]
struct Raw {
    entries: Vec<(String, String, Origin)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<(&str, Origin)> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, o)| (v.as_str(), *o))
    }

    fn parse<T: FromStr>(&self, key: &str, expected: &str) -> CliResult<Option<T>> {
        let Some((value, origin)) = self.get(key) else {
            return Ok(None);
        };
        value.parse().map(Some).map_err(|_| {
            let message = format!("{key} = {value:?} is not {expected}");
            match origin {
                Origin::Line(line) => CliError::ConfigLine { line, message },
                Origin::Flag => CliError::Usage(format!("--{key}: {message}")),
            }
        })
    }
}

fn normalize_key(key: &str) -> CliResult<String> {
    let key = key.trim().replace('-', "_");
    if KEYS.contains(&key.as_str()) {
        Ok(key)
    } else {
        Err(CliError::Usage(format!("unknown key {key:?}; valid keys: {}", KEYS.join(", "))))
    }
}

fn parse_file(text: &str, raw: &mut Raw) -> CliResult<()> {
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(CliError::ConfigLine {
                line: line_no,
                message: format!("expected `key = value`, got {content:?}"),
            });
        };
        let key = normalize_key(key).map_err(|e| CliError::ConfigLine {
            line: line_no,
            message: e.to_string(),
        })?;
        raw.entries.push((key, value.trim().to_string(), Origin::Line(line_no)));
    }
    Ok(())
}

fn parse_flags(args: &[String], raw: &mut Raw) -> CliResult<()> {
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let Some(name) = flag.strip_prefix("--") else {
            return Err(CliError::Usage(format!("expected --key value, got {flag:?}")));
        };
        let (key, value) = match name.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?;
                (name.to_string(), v.clone())
            }
        };
        raw.entries.push((normalize_key(&key)?, value, Origin::Flag));
    }
    Ok(())
}

struct Rates(Vec<f64>);

impl FromStr for Rates {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| ()))
            .collect::<Result<Vec<_>, _>>()
            .map(Rates)
    }
}

/// Builds a validated configuration from optional file contents and flag
/// overrides (`--key value` or `--key=value`; later settings win).
pub fn parse_config(command: Command, file: Option<&str>, flags: &[String]) -> CliResult<RunConfig> {
    let mut raw = Raw::default();
    if let Some(text) = file {
        parse_file(text, &mut raw)?;
    }
    parse_flags(flags, &mut raw)?;

    let topology: Topology = raw
        .parse("topology", "a topology like 784-500-10")?
        .unwrap_or_else(|| "784-500-10".parse().expect("default topology"));
    let mut train = TrainConfig::for_topology(&topology).unwrap_or_else(|| {
        let epsilon = 0.5;
        TrainConfig {
            beta_magnitude: 1.0,
            random_beta_sign: true,
            epsilon,
            free_iters: 100,
            clamped_iters: (topology.num_layers() as f64 / epsilon).ceil() as usize,
            learning_rates: Vec::new(),
            minibatch_size: 20,
            epochs: 25,
            rng_seed: 0,
            precision: Precision::F64,
        }
    });
    if let Some(v) = raw.parse("beta", "a number")? {
        train.beta_magnitude = v;
    }
    if let Some(v) = raw.parse("random_beta_sign", "true or false")? {
        train.random_beta_sign = v;
    }
    if let Some(v) = raw.parse("epsilon", "a number")? {
        train.epsilon = v;
    }
    if let Some(v) = raw.parse("free_iters", "a non-negative integer")? {
        train.free_iters = v;
    }
    if let Some(v) = raw.parse("clamped_iters", "a non-negative integer")? {
        train.clamped_iters = v;
    }
    if let Some(Rates(v)) = raw.parse("learning_rates", "a comma-separated list of numbers")? {
        train.learning_rates = v;
    }
    if let Some(v) = raw.parse("minibatch_size", "a non-negative integer")? {
        train.minibatch_size = v;
    }
    if let Some(v) = raw.parse("epochs", "a non-negative integer")? {
        train.epochs = v;
    }
    if let Some(v) = raw.parse("rng_seed", "an unsigned 64-bit integer")? {
        train.rng_seed = v;
    }
    if let Some(v) = raw.parse::<Precision>("precision", "f32 or f64")? {
        train.precision = v;
    }

    let config = RunConfig {
        command,
        train,
        train_images: raw.parse("train_images", "a path")?,
        train_labels: raw.parse("train_labels", "a path")?,
        validation_size: raw.parse("validation_size", "a non-negative integer")?.unwrap_or(10_000),
        subset: raw.parse("subset", "a non-negative integer")?,
        output_dir: raw.parse("output_dir", "a path")?.unwrap_or_else(|| PathBuf::from("out")),
        checkpoint: raw.parse("checkpoint", "a path")?,
        resume: raw.parse("resume", "a path")?,
        split: raw.parse("split", "train, validation or all")?.unwrap_or(Split::Validation),
        instances: raw.parse("instances", "a non-negative integer")?.unwrap_or(50),
        oracle_seed: raw.parse("oracle_seed", "an unsigned 64-bit integer")?.unwrap_or(0),
        oracle_topology: raw
            .parse("oracle_topology", "a topology like 6-5-4")?
            .unwrap_or_else(|| "6-5-4".parse().expect("default oracle topology")),
        grid_points: raw.parse("grid_points", "a non-negative integer")?.unwrap_or(401),
        topology,
    };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| CliError::Usage(m);
        if matches!(self.command, Command::Train | Command::Eval) {
            if self.topology.output_dim() != eqprop::mnist::NUM_CLASSES {
                return Err(usage(format!(
                    "MNIST commands need 10 output units, topology {} has {}",
                    self.topology,
                    self.topology.output_dim()
                )));
            }
            if self.train_images.is_none() || self.train_labels.is_none() {
                return Err(usage("train_images and train_labels must be set".into()));
            }
        }
        if self.command == Command::Train {
            self.train
                .validate(&self.topology)
                .map_err(|e| usage(format!("training configuration: {e}")))?;
        }
        if self.command == Command::Eval && self.checkpoint.is_none() {
            return Err(usage("eval needs a checkpoint".into()));
        }
        if self.subset == Some(0) {
            return Err(usage("subset must be at least 1".into()));
        }
        if self.grid_points < 3 || self.grid_points.is_multiple_of(2) {
            return Err(usage(format!("grid_points must be odd and at least 3, got {}", self.grid_points)));
        }
        Ok(())
    }
}
