use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqprop::mnist::{write_idx_images, write_idx_labels, IdxImages};
use eqprop_cli::checkpoint::encoded_len;
use eqprop_cli::metrics::{read_metrics, HEADER};
use eqprop_cli::Checkpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 4x4 images whose bright pixel encodes the class, plus noise.
fn write_synthetic(dir: &Path, count: usize) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    let mut pixels = Vec::with_capacity(count * 16);
    for &l in &labels {
        for p in 0..16 {
            let on = p == l as usize || p == 15 - l as usize;
            pixels.push(if on { 255 } else { rng.random_range(0..60) });
        }
    }
    let images = IdxImages {
        count,
        rows: 4,
        cols: 4,
        pixels,
    };
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    write_idx_images(File::create(&ip).unwrap(), &images).unwrap();
    write_idx_labels(File::create(&lp).unwrap(), &labels).unwrap();
    (ip, lp)
}

fn eqprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqprop")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

struct Fixture {
    dir: tempfile::TempDir,
    images: String,
    labels: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = write_synthetic(dir.path(), 150);
        Fixture {
            images: i.to_string_lossy().into_owned(),
            labels: l.to_string_lossy().into_owned(),
            dir,
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let out = self.out(out);
        let mut args = vec![
            "train",
            "--train-images",
            &self.images,
            "--train-labels",
            &self.labels,
            "--topology",
            "16-12-10",
            "--learning-rates",
            "0.1,0.05",
            "--validation-size",
            "20",
            "--subset",
            "100",
            "--epochs",
            "1",
            "--output-dir",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        eqprop(&args)
    }
}

#[test]
fn one_epoch_writes_header_and_one_row() {
    let f = Fixture::new();
    let o = f.train("run", &[]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(f.out("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert_eq!(lines[0], HEADER);
    let rows = read_metrics(&f.out("run/metrics.csv")).unwrap();
    assert_eq!(rows[0].epoch, 1);
    assert!(rows[0].val_error_rate.is_some());

    let ckpt_path = f.out("run/checkpoint.eqp");
    let bytes = std::fs::read(&ckpt_path).unwrap();
    let top = "16-12-10".parse().unwrap();
    assert_eq!(bytes.len(), encoded_len(&top, eqprop::train::Precision::F64));
    assert_eq!(Checkpoint::load(&ckpt_path).unwrap().epoch, 1);
}

#[test]
fn seeded_runs_repeat_exactly() {
    let f = Fixture::new();
    for out in ["a", "b"] {
        let o = f.train(out, &["--epochs", "2", "--rng-seed", "5"]);
        assert!(o.status.success(), "{}", text(&o));
    }
    let strip = |p: &str| {
        let mut rows = read_metrics(&f.out(p)).unwrap();
        rows.iter_mut().for_each(|r| r.wall_seconds = 0.0);
        rows
    };
    assert_eq!(strip("a/metrics.csv"), strip("b/metrics.csv"));
    let a = std::fs::read(f.out("a/checkpoint.eqp")).unwrap();
    let b = std::fs::read(f.out("b/checkpoint.eqp")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resuming_continues_the_epoch_count() {
    let f = Fixture::new();
    assert!(f.train("r", &[]).status.success());
    let ckpt = f.out("r/checkpoint.eqp");
    let o = f.train("r", &["--resume", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let rows = read_metrics(&f.out("r/metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(Checkpoint::load(&ckpt).unwrap().epoch, 2);
}

#[test]
fn f32_training_writes_an_f32_checkpoint() {
    let f = Fixture::new();
    let o = f.train("s", &["--precision", "f32"]);
    assert!(o.status.success(), "{}", text(&o));
    let bytes = std::fs::read(f.out("s/checkpoint.eqp")).unwrap();
    assert_eq!(bytes[4], 4);
}

#[test]
fn eval_reports_the_error_rate() {
    let f = Fixture::new();
    assert!(f.train("e", &[]).status.success());
    let ckpt = f.out("e/checkpoint.eqp");
    let o = eqprop(&[
        "eval",
        "--train-images",
        &f.images,
        "--train-labels",
        &f.labels,
        "--topology",
        "16-12-10",
        "--validation-size",
        "20",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("validation error rate"), "{}", text(&o));
}

#[test]
fn eval_with_another_topology_exits_2() {
    let f = Fixture::new();
    assert!(f.train("m", &[]).status.success());
    let ckpt = f.out("m/checkpoint.eqp");
    let o = eqprop(&[
        "eval",
        "--train-images",
        &f.images,
        "--train-labels",
        &f.labels,
        "--topology",
        "16-11-10",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("16-12-10"), "{}", text(&o));
}

#[test]
fn config_errors_exit_2_with_the_line() {
    let f = Fixture::new();
    let cfg = f.out("bad.conf");
    std::fs::write(&cfg, "topology = 16-12-10\nepsilon = fast\n").unwrap();
    let o = eqprop(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("line 2"), "{}", text(&o));

    let o = eqprop(&["train", "--epoks", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("valid keys"));

    assert_eq!(eqprop(&["fly"]).status.code(), Some(2));
}

#[test]
fn config_file_and_flags_combine() {
    let f = Fixture::new();
    let cfg = f.out("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# tiny run\ntrain_images = {}\ntrain_labels = {}\ntopology = 16-12-10\nlearning_rates = 0.1, 0.05\n\
             validation_size = 0\nepochs = 3\n",
            f.images, f.labels
        ),
    )
    .unwrap();
    let out = f.out("c");
    let o = eqprop(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "1",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].val_error_rate, None);
}

#[test]
fn missing_and_corrupt_files_exit_3() {
    let f = Fixture::new();
    let o = eqprop(&[
        "train",
        "--train-images",
        "/nonexistent/images",
        "--train-labels",
        &f.labels,
        "--topology",
        "16-12-10",
        "--learning-rates",
        "0.1,0.05",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));

    let bad = f.out("bad.eqp");
    std::fs::write(&bad, b"EQP9\x08").unwrap();
    let o = eqprop(&[
        "eval",
        "--train-images",
        &f.images,
        "--train-labels",
        &f.labels,
        "--checkpoint",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    assert!(text(&o).contains("EQP9"));
}

#[test]
fn gradcheck_passes_on_a_small_net() {
    let o = eqprop(&["gradcheck", "--oracle-topology", "4-3-2", "--instances", "5"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{out}");
}

#[test]
fn stochastic_check_passes() {
    let o = eqprop(&["stochastic-check"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(!text(&o).contains("FAIL"));
}
