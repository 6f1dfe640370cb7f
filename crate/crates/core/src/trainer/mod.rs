//! AdamW training of the predictor and the objective ablation.

pub mod ablation;
pub mod adamw;
pub mod train;

pub use ablation::{arm_name, loss_window, run_ablation, AblationArm, AblationRow, AblationRun, ARMS};
pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use train::{
    init_model, smoothed_endpoints, train, train_with_progress, training_items, write_loss_csv, TrainConfig, TrainRun,
};
