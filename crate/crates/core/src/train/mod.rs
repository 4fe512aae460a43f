//! Training harness: models, SGD, the training loop, checkpoints and the
//! ablation runners.

mod ablation;
mod checkpoint;
mod fit;
mod model;
mod optim;

pub use ablation::{
    default_stage_configs, matched_depthwise, perturbed, run_ablation_affine, run_ablation_generator, run_ablation_init, run_ablation_stage, run_seeds,
    AffineCurves, AffinePoint, Comparison, Experiment, GeneratorPoint, MacMatch, RunSummary,
};
pub use checkpoint::{load_model, save_model};
pub use fit::{accuracy, apply_step, batch_gradients, evaluate, train, train_with, EpochRecord, TrainConfig, TrainOutcome};
pub use model::{argmax, AffinityInit, BlockShape, Model, ModelBlock, ModelSpec, ParamKind, ParamMut, ParamRef, Spatial, StageSpec};
pub use optim::{sgd_step, SgdHyper, SgdParam, SgdState};
