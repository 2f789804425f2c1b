//! Argument parsing, command dispatch and report rendering for the `sgada`
//! binary.

mod args;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use sgada::pipeline::{
    evaluate_latest, run_all, sweep, write_datasets, ExperimentConfig, Manifest, Phase, RunControl, RunOutcome,
};
use sgada::pseudo::SelectionMode;

pub use args::{build_command, parse_args, Command, Verb, OUT_DIR_ENV};
pub use report::{render_report, REQUIRED_ARTIFACTS};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit status 2.
    Usage(String),
    /// The command ran and failed; exit status 1.
    Runtime(sgada::Error),
    /// Report inputs that do not exist, named relative to the run directory.
    Missing { dir: PathBuf, files: Vec<String> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Missing { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Missing { dir, files } => {
                write!(f, "{} is missing required artifacts:", dir.display())?;
                for file in files {
                    write!(f, "\n  {file}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<sgada::Error> for CliError {
    fn from(e: sgada::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Config file (if any) with the command-line overrides applied on top.
pub fn resolve_config(cmd: &Command) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cmd.config_path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in &cmd.overrides {
        cfg.set(k, v).map_err(|e| CliError::Usage(format!("--{k}: {e}")))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn summary(o: &RunOutcome) -> String {
    let mut lines = vec![format!("run directory: {}", o.out_dir.display())];
    for (name, r) in [
        ("source-only", &o.source_only),
        ("warm-up", &o.warmup),
        ("sgada", &o.sgada),
    ] {
        if let Some(r) = r {
            lines.push(format!("{name:<12} macro {:.2}  overall {:.2}", r.macro_avg, r.overall));
        }
    }
    if let Some(n) = o.n_pseudo {
        lines.push(format!("pseudo-labels: {n}"));
    }
    for w in &o.warnings {
        lines.push(format!("warning: {w}"));
    }
    lines.join("\n")
}

fn run_phase(cfg: &ExperimentConfig, out: &Path, stop_after: Option<Phase>) -> Result<String, CliError> {
    let outcome = run_all(
        cfg,
        out,
        RunControl {
            stop_after,
            halt_at: None,
        },
    )?;
    // Success means the requested phase has its manifest entry.
    let manifest = Manifest::load(out)?;
    let phase = stop_after.unwrap_or(Phase::Sgada);
    if !manifest.is_done(phase) {
        return Err(CliError::Runtime(sgada::Error::Contract(format!(
            "phase {} did not complete",
            phase.as_str()
        ))));
    }
    Ok(summary(&outcome))
}

/// Runs one command and returns what it prints on success.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    if cmd.verb == Verb::Report {
        return render_report(&cmd.out_dir);
    }
    let cfg = resolve_config(cmd)?;
    let out = cmd.out_dir.as_path();
    match cmd.verb {
        Verb::GenData => {
            let (s, t) = write_datasets(&cfg, out)?;
            Ok(format!("{}\n{}", s.display(), t.display()))
        }
        Verb::Pretrain => run_phase(&cfg, out, Some(Phase::Pretrain)),
        Verb::Warmup => run_phase(&cfg, out, Some(Phase::Warmup)),
        Verb::PseudoLabel => run_phase(&cfg, out, Some(Phase::PseudoLabel)),
        Verb::Adapt | Verb::RunAll => run_phase(&cfg, out, None),
        Verb::Evaluate => Ok(evaluate_latest(&cfg, out)?.to_text().trim_end().to_string()),
        Verb::Sweep => {
            let modes = match cmd.sweep_mode {
                Some(m) => vec![m],
                None => SelectionMode::ALL.to_vec(),
            };
            let mut paths = Vec::new();
            for m in modes {
                paths.push(sweep(&cfg, out, cmd.sweep_step, m)?.display().to_string());
            }
            Ok(paths.join("\n"))
        }
        Verb::Report => unreachable!(),
    }
}
