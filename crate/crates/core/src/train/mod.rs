pub mod kfold;
pub mod loss;
pub mod optim;
pub mod runner;

pub use kfold::{patient_kfold, Fold, FoldAssignment};
pub use loss::{cross_entropy_loss, kl_div_loss, LossKind};
pub use optim::{Adam, AdamConfig};
pub use runner::{run_folds, train_model, transfer_from, transfer_head, FoldRecord, RunRecord, TrainConfig, TrainedRun};
