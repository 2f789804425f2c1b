use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches};
use sgada::pipeline::CONFIG_KEYS;
use sgada::pseudo::SelectionMode;

use crate::CliError;

pub const OUT_DIR_ENV: &str = "SGADA_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    GenData,
    Pretrain,
    Warmup,
    PseudoLabel,
    Adapt,
    Evaluate,
    RunAll,
    Sweep,
    Report,
}

const VERBS: [(&str, Verb, &str); 9] = [
    (
        "gen-data",
        Verb::GenData,
        "Write the configured source and target datasets as CSV",
    ),
    ("pretrain", Verb::Pretrain, "Train F_s and C on labeled source data"),
    (
        "warmup",
        Verb::Warmup,
        "Adversarial warm-up of F_t (runs earlier phases if needed)",
    ),
    (
        "pseudo-label",
        Verb::PseudoLabel,
        "Select target pseudo-labels from the frozen warm-up model",
    ),
    (
        "adapt",
        Verb::Adapt,
        "Self-training guided adaptation (runs earlier phases if needed)",
    ),
    (
        "evaluate",
        Verb::Evaluate,
        "Evaluate the latest checkpoint on the target test split",
    ),
    (
        "run-all",
        Verb::RunAll,
        "Every phase and evaluation, resuming if the directory holds a run",
    ),
    (
        "sweep",
        Verb::Sweep,
        "Selection precision over a (tau_cls, tau_disc) grid",
    ),
    (
        "report",
        Verb::Report,
        "Render accuracy and selection tables plus plot-ready CSVs",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Command {
    pub verb: Verb,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// `(key, value)` in canonical key order.
    pub overrides: Vec<(String, String)>,
    pub sweep_step: f64,
    pub sweep_mode: Option<SelectionMode>,
}

fn common_args(cmd: clap::Command) -> clap::Command {
    let cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Config file of `key = value` lines"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .help(format!("Output directory (falls back to ${OUT_DIR_ENV})")),
        );
    CONFIG_KEYS.iter().fold(cmd, |cmd, key| {
        let dashed = key.replace('_', "-");
        let mut arg = Arg::new(*key).long(*key).value_name("VALUE").action(ArgAction::Set);
        if dashed != *key {
            arg = arg.alias(dashed);
        }
        cmd.arg(arg.help_heading("Config overrides"))
    })
}

pub fn build_command() -> clap::Command {
    let mut root = clap::Command::new("sgada")
        .about("Self-training guided adversarial domain adaptation")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, _, about) in VERBS {
        let mut sub = common_args(clap::Command::new(name).about(about));
        if name == "sweep" {
            sub = sub
                .arg(
                    Arg::new("step")
                        .long("step")
                        .value_name("STEP")
                        .value_parser(clap::value_parser!(f64))
                        .default_value("0.01"),
                )
                .arg(Arg::new("mode").long("mode").value_name("MODE").value_parser([
                    "cls_only",
                    "disc_only",
                    "cls_and_disc",
                ]));
        }
        root = root.subcommand(sub);
    }
    root
}

fn from_matches(verb: Verb, m: &ArgMatches, env_out: Option<OsString>) -> Result<Command, CliError> {
    let out_dir = match (m.get_one::<String>("out"), env_out) {
        (Some(o), _) => PathBuf::from(o),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => {
            return Err(CliError::Usage(format!(
                "no output directory: pass --out or set {OUT_DIR_ENV}"
            )))
        }
    };
    let overrides = CONFIG_KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let (sweep_step, sweep_mode) = if verb == Verb::Sweep {
        let mode = match m.get_one::<String>("mode") {
            Some(s) => Some(s.parse().map_err(|e: sgada::Error| CliError::Usage(e.to_string()))?),
            None => None,
        };
        (*m.get_one::<f64>("step").expect("defaulted"), mode)
    } else {
        (0.01, None)
    };
    Ok(Command {
        verb,
        config_path: m.get_one::<String>("config").map(PathBuf::from),
        out_dir,
        overrides,
        sweep_step,
        sweep_mode,
    })
}

/// Strict parse: unknown verbs, flags and config keys are errors.
/// `env_out` stands in for the output-directory environment variable.
pub fn parse_args<I, T>(argv: I, env_out: Option<OsString>) -> Result<Command, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = build_command().try_get_matches_from(argv)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let verb = VERBS.iter().find(|v| v.0 == name).expect("registered verb").1;
    from_matches(verb, sub, env_out)
        .map_err(|e| build_command().error(clap::error::ErrorKind::MissingRequiredArgument, e.to_string()))
}
