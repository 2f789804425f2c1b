//! Configuration, phase trainers, evaluation and the resumable run.

mod config;
mod metrics;
mod phases;
mod run;

pub use config::{
    flir_toy_spec, two_moons_spec, Benchmark, ExperimentConfig, CONFIG_KEYS, FLIR_TOY_CLASSES, FLIR_TOY_SHIFT,
};
pub use metrics::{macro_average, MetricsReport};
pub use phases::{
    evaluate, generate_pseudolabels, pretrain_source, pretrain_source_from, sgada_adapt, sgada_adapt_from,
    target_predictions, warmup_adda, warmup_adda_from, EpochHook, Flow, Phase, PhaseRecord,
};
pub use run::{
    build_datasets, checkpoint_file, evaluate_latest, metrics_file, parse_selection_csv, phase_file, prepare_data,
    run_all, selection_file, sweep, write_datasets, Manifest, PreparedData, RunControl, RunOutcome, CONFIG_COPY,
    EVAL_STAGES, MANIFEST, PSEUDO_LABELS, TIMING, TRAINING_ORDER,
};
