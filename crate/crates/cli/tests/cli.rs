use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgada::pipeline::MetricsReport;
use sgada_cli::REQUIRED_ARTIFACTS;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sgada"));
    c.env_remove("SGADA_OUT_DIR");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn text(o: &Output) -> (String, String) {
    (
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

const TINY: [&str; 14] = [
    "--benchmark",
    "custom",
    "--n-per-class",
    "60,120,90",
    "--mean-shift",
    "1.0,0.5",
    "--epochs-pretrain",
    "2",
    "--epochs-warmup",
    "1",
    "--epochs-sgada",
    "1",
    "--batch-size",
    "16",
];

#[test]
fn missing_verb_is_a_usage_error() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = scratch("unknown");
    let o = bin()
        .args(["run-all", "--lrate", "3", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).1.contains("--lrate"));
}

#[test]
fn bad_config_value_is_a_usage_error() {
    let dir = scratch("bad-value");
    let o = bin()
        .args(["run-all", "--lr-ft", "fast", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_is_required() {
    let o = bin().args(["gen-data"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_writes_both_domains() {
    let dir = scratch("gen");
    let o = bin()
        .arg("gen-data")
        .args(TINY)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{:?}", text(&o));
    let source = fs::read_to_string(dir.join("source.csv")).unwrap();
    assert_eq!(source.lines().count(), 1 + 270);
    assert!(dir.join("target.csv").exists());
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = scratch("env");
    let o = bin()
        .arg("gen-data")
        .args(TINY)
        .env("SGADA_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{:?}", text(&o));
    assert!(dir.join("source.csv").exists());
}

#[test]
fn tiny_run_then_report_evaluate_and_sweep() {
    let dir = scratch("run");
    let o = bin().arg("run-all").args(TINY).arg("--out").arg(&dir).output().unwrap();
    assert!(o.status.success(), "{:?}", text(&o));
    assert!(text(&o).0.contains("pseudo-labels"));

    let first = bin().arg("report").arg("--out").arg(&dir).output().unwrap();
    assert!(first.status.success(), "{:?}", text(&first));
    let curves = fs::read(dir.join("loss_curves.csv")).unwrap();
    let second = bin().arg("report").arg("--out").arg(&dir).output().unwrap();
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(curves, fs::read(dir.join("loss_curves.csv")).unwrap());
    assert!(text(&first).0.contains("Warm-up (ADDA)"));

    let o = bin()
        .arg("evaluate")
        .args(TINY)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{:?}", text(&o));
    assert!(text(&o).0.starts_with("macro_acc = "));

    let o = bin()
        .args(["sweep", "--step", "0.25", "--mode", "cls_only"])
        .args(TINY)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{:?}", text(&o));
    let sweep = fs::read_to_string(dir.join("sweep_cls_only.csv")).unwrap();
    // Header plus a 5 x 5 threshold grid.
    assert_eq!(sweep.lines().count(), 1 + 25);
}

#[test]
fn report_on_an_empty_directory_lists_what_is_missing() {
    let dir = scratch("empty");
    let o = bin().arg("report").arg("--out").arg(&dir).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = text(&o).1;
    for f in REQUIRED_ARTIFACTS {
        assert!(err.contains(f), "{f} not in {err}");
    }
}

fn metrics(per_class: [f64; 3], macro_avg: f64) -> String {
    MetricsReport {
        class_names: vec!["bicycle".into(), "car".into(), "person".into()],
        per_class: per_class.iter().copied().map(Some).collect(),
        macro_avg,
        overall: macro_avg,
        confusion: vec![vec![0; 3]; 3],
    }
    .to_text()
}

#[test]
fn report_rows_follow_the_stage_order() {
    let dir = scratch("synthetic");
    fs::write(dir.join("manifest.txt"), "phase.sgada = done\n").unwrap();
    fs::write(
        dir.join("metrics_source_only.txt"),
        metrics([69.89, 83.89, 86.52], 80.10),
    )
    .unwrap();
    fs::write(dir.join("metrics_warmup.txt"), metrics([86.67, 96.95, 89.10], 90.90)).unwrap();
    fs::write(dir.join("metrics_sgada.txt"), metrics([87.13, 94.44, 92.03], 91.20)).unwrap();
    fs::write(dir.join("phase_pretrain.csv"), "epoch,ce_loss,train_acc\n0,1.0,50.0\n").unwrap();
    fs::write(
        dir.join("phase_warmup.csv"),
        "epoch,disc_loss,adv_loss,d_source_mean,d_target_mean\n",
    )
    .unwrap();
    fs::write(
        dir.join("phase_sgada.csv"),
        "epoch,disc_loss,adv_loss,selftrain_loss,d_source_mean,d_target_mean\n",
    )
    .unwrap();

    let o = bin().arg("report").arg("--out").arg(&dir).output().unwrap();
    assert!(o.status.success(), "{:?}", text(&o));
    let out = text(&o).0;
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("Source only") || l.starts_with("Warm-up") || l.starts_with("SGADA"))
        .collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert!(rows[0].starts_with("Source only") && rows[0].trim_end().ends_with("80.10"));
    assert!(rows[1].starts_with("Warm-up (ADDA)") && rows[1].trim_end().ends_with("90.90"));
    assert!(rows[2].starts_with("SGADA") && rows[2].trim_end().ends_with("91.20"));
    assert!(rows[0].contains("69.89") && rows[2].contains("87.13"));
    let curves = fs::read_to_string(dir.join("loss_curves.csv")).unwrap();
    assert_eq!(
        curves,
        "phase,epoch,quantity,value\npretrain,0,ce_loss,1.0\npretrain,0,train_acc,50.0\n"
    );
}
