//! Losses, networks, optimiser and the two-phase training schedule.

pub mod ablation;
pub mod config;
pub mod data;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod trainer;

pub use config::TrainConfig;
pub use data::{SampleKind, TrainSample, TrainingData};
pub use losses::{localized_l1, reconstruction_l1, total_loss, L1Convention, LossReport, LossTerms, LossWeights};
pub use nets::{adversarial_losses, PatchDiscriminator, PerceptualNet};
pub use optim::Adam;
pub use trainer::{setting_spec, train, train_decoupling, train_warmup, SettingSpec, TrainSinks, Trainer};
pub use ablation::{evaluate_held_out, pearson, run_ablation, run_setting_from_warmup, AblationOutcome, HeldOutStats};
