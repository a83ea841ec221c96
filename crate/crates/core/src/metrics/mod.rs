//! Fidelity, identity, temporal and distributional metrics plus the cost model.

pub mod cost;
pub mod embedder;
pub mod features;
pub mod fidelity;
pub mod frechet;
pub mod report;
pub mod temporal;

pub use cost::{amortized_cost, CostModel};
pub use embedder::{cosine, identity_similarity, IdentityEmbedder};
pub use features::{clip_features, frame_features, CLIP_LEN, FRAME_FEATURE_DIM};
pub use fidelity::{masked_l1, masked_mse, masked_psnr, masked_ssim, psnr_from_mse, PSNR_CAP_DB};
pub use frechet::{frechet_distance, sym_sqrt};
pub use report::{evaluate, EvalReport, EvalVideo};
pub use temporal::{background_consistency, frame_coherence, motion_smoothness, temporal_flicker};
