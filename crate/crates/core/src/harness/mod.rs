//! Synthetic benchmark, training loop, evaluation and ablation.

mod ablate;
mod dataset;
mod eval;
mod synthetic;
mod train;

pub use ablate::{ablate, to_csv, AblationGrid, AblationRow, CSV_HEADER};
pub use dataset::{parse_dataset, read_dataset, select_classes, shots_in, write_dataset};
pub use eval::{
    accuracy, base_to_new_split, evaluate_base_to_new, evaluate_fewshot, harmonic_mean,
    predict_labels, EvalReport, Metrics,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};
pub use train::{cosine_annealing_lr, train, train_from, TrainConfig, TrainOutcome};
