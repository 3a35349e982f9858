//! Per-epoch `metrics.csv` rows and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use eqprop::train::{MetricsRecord, MetricsSink, Precision, TrainRng};
use eqprop::{EqPropError, LayeredParams, Scalar};

use crate::checkpoint::{Checkpoint, Params};
use crate::error::{CliError, CliResult};

pub const HEADER: &str = "epoch,train_error,val_error,mean_energy,mean_cost,wall_seconds";

/// One CSV row; floats use the shortest representation that round-trips.
pub fn format_row(r: &MetricsRecord) -> String {
    let val = r.val_error_rate.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        r.epoch, r.train_error_rate, val, r.mean_energy, r.mean_cost, r.wall_seconds
    )
}

/// Parses a file written by [`CsvSink`], checking the header.
pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |line: usize, message: String| CliError::Usage(format!("{}:{line}: {message}", path.display()));
    match lines.next() {
        Some(Ok(h)) if h == HEADER => {}
        Some(Ok(h)) => return Err(bad(1, format!("unexpected header {h:?}"))),
        Some(Err(e)) => return Err(CliError::io(path, e)),
        None => return Err(bad(1, "empty file".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(i + 2, format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, format!("not a number: {s:?}")));
        out.push(MetricsRecord {
            epoch: f[0].parse().map_err(|_| bad(i + 2, format!("bad epoch {:?}", f[0])))?,
            train_error_rate: num(f[1])?,
            val_error_rate: if f[2].is_empty() { None } else { Some(num(f[2])?) },
            mean_energy: num(f[3])?,
            mean_cost: num(f[4])?,
            wall_seconds: num(f[5])?,
        });
    }
    Ok(out)
}

/// Appends a row to `metrics.csv` and rewrites the checkpoint after every
/// epoch, echoing a summary to stdout.
pub struct CsvSink {
    csv: File,
    checkpoint: PathBuf,
    precision: Precision,
    quiet: bool,
}

impl CsvSink {
    /// Starts a fresh file, or appends when `append` is set and the file
    /// already exists.
    pub fn create(csv_path: &Path, checkpoint: PathBuf, precision: Precision, append: bool) -> CliResult<Self> {
        let exists = csv_path.exists();
        let mut csv = if append && exists {
            OpenOptions::new().append(true).open(csv_path)
        } else {
            File::create(csv_path)
        }
        .map_err(|e| CliError::io(csv_path, e))?;
        if !(append && exists) {
            writeln!(csv, "{HEADER}").map_err(|e| CliError::io(csv_path, e))?;
        }
        Ok(CsvSink {
            csv,
            checkpoint,
            precision,
            quiet: false,
        })
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }
}

fn to_core(e: CliError) -> EqPropError {
    match e {
        CliError::Core { source, .. } => source,
        CliError::Io { source, .. } => EqPropError::Io(source),
        other => EqPropError::Precondition(other.to_string()),
    }
}

impl<T: Scalar> MetricsSink<T> for CsvSink {
    fn on_epoch(
        &mut self,
        record: &MetricsRecord,
        params: &LayeredParams<T>,
        epochs_done: usize,
        rng: &TrainRng,
    ) -> eqprop::Result<()> {
        writeln!(self.csv, "{}", format_row(record))?;
        self.csv.flush()?;
        let params = match self.precision {
            Precision::F32 => Params::F32(params.cast()),
            Precision::F64 => Params::F64(params.cast()),
        };
        Checkpoint {
            params,
            epoch: epochs_done as u64,
            rng_key: rng.key(),
        }
        .save(&self.checkpoint)
        .map_err(to_core)?;
        if !self.quiet {
            let val = record
                .val_error_rate
                .map(|v| format!("  val error {:.2}%", 100.0 * v))
                .unwrap_or_default();
            println!(
                "epoch {:>3}  train error {:.2}%{val}  energy {:.4}  cost {:.4}  {:.1}s",
                record.epoch,
                100.0 * record.train_error_rate,
                record.mean_energy,
                record.mean_cost,
                record.wall_seconds
            );
        }
        Ok(())
    }
}
