use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sgada::pipeline::{metrics_file, parse_selection_csv, phase_file, MetricsReport, Phase, MANIFEST};
use sgada::pseudo::SelectionMode;

use crate::CliError;

/// Files `render_report` cannot do without, relative to the run directory.
pub const REQUIRED_ARTIFACTS: [&str; 7] = [
    MANIFEST,
    "metrics_source_only.txt",
    "metrics_warmup.txt",
    "metrics_sgada.txt",
    "phase_pretrain.csv",
    "phase_warmup.csv",
    "phase_sgada.csv",
];

const ROWS: [(&str, &str); 3] = [
    ("source_only", "Source only"),
    ("warmup", "Warm-up (ADDA)"),
    ("sgada", "SGADA"),
];
const FEATURE_STAGES: [&str; 3] = ["source_only", "warmup", "sgada"];

fn read(dir: &Path, rel: &str) -> Result<String, CliError> {
    let path = dir.join(rel);
    fs::read_to_string(&path).map_err(|e| CliError::Runtime(sgada::Error::Io { path, source: e }))
}

fn write(dir: &Path, rel: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(rel);
    fs::write(&path, text).map_err(|e| CliError::Runtime(sgada::Error::Io { path, source: e }))
}

fn accuracy_table(reports: &[(&str, MetricsReport)]) -> String {
    let names = &reports[0].1.class_names;
    let mut out = format!("{:<16}", "Method");
    for n in names {
        let _ = write!(out, "{n:>10}");
    }
    let _ = writeln!(out, "{:>10}", "Avg");
    for (label, r) in reports {
        let _ = write!(out, "{label:<16}");
        for acc in &r.per_class {
            match acc {
                Some(a) => {
                    let _ = write!(out, "{a:>10.2}");
                }
                None => {
                    let _ = write!(out, "{:>10}", "n/a");
                }
            }
        }
        let _ = writeln!(out, "{:>10.2}", r.macro_avg);
    }
    out
}

/// Long-format loss curves: `phase,epoch,quantity,value`.
fn loss_curves(dir: &Path) -> Result<String, CliError> {
    let mut out = String::from("phase,epoch,quantity,value\n");
    for phase in [Phase::Pretrain, Phase::Warmup, Phase::Sgada] {
        let text = read(dir, &phase_file(phase))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            for (q, v) in header.iter().zip(&cells).skip(1) {
                let _ = writeln!(out, "{},{},{q},{v}", phase.as_str(), cells[0]);
            }
        }
    }
    Ok(out)
}

/// Feature dumps of every stage that wrote one, with a leading stage column.
fn features(dir: &Path) -> Result<Option<String>, CliError> {
    let mut out = String::new();
    for stage in FEATURE_STAGES {
        let rel = format!("features_{stage}.csv");
        if !dir.join(&rel).exists() {
            continue;
        }
        let text = read(dir, &rel)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if out.is_empty() {
            let _ = writeln!(out, "stage,{header}");
        }
        for line in lines {
            let _ = writeln!(out, "{stage},{line}");
        }
    }
    Ok((!out.is_empty()).then_some(out))
}

/// Renders the accuracy table and selection tables of a finished run and
/// writes `loss_curves.csv` (and `features.csv` when feature dumps exist)
/// into the run directory.
pub fn render_report(run_dir: &Path) -> Result<String, CliError> {
    let missing: Vec<String> = REQUIRED_ARTIFACTS
        .iter()
        .filter(|f| !run_dir.join(f).exists())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Missing {
            dir: run_dir.to_path_buf(),
            files: missing,
        });
    }

    let mut reports = Vec::new();
    for (stage, label) in ROWS {
        let rel = metrics_file(stage);
        let origin = run_dir.join(&rel).display().to_string();
        reports.push((label, MetricsReport::parse_text(&read(run_dir, &rel)?, &origin)?));
    }
    let mut out = String::from("Per-class accuracy on the target test split (%)\n\n");
    out.push_str(&accuracy_table(&reports));

    let names = reports[0].1.class_names.clone();
    for mode in SelectionMode::ALL {
        let rel = format!("selection_{}.csv", mode.as_str());
        if !run_dir.join(&rel).exists() {
            continue;
        }
        let origin = run_dir.join(&rel).display().to_string();
        let stats = parse_selection_csv(&read(run_dir, &rel)?, &origin)?;
        let _ = write!(
            out,
            "\nPseudo-label selection, {}\n\n{}",
            mode.as_str(),
            stats.to_table(&names)
        );
    }

    write(run_dir, "loss_curves.csv", &loss_curves(run_dir)?)?;
    out.push_str("\nWrote loss_curves.csv");
    if let Some(f) = features(run_dir)? {
        write(run_dir, "features.csv", &f)?;
        out.push_str("\nWrote features.csv");
    }
    out.push('\n');
    Ok(out)
}
