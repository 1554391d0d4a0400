//! Semi-supervised imitation learning from demonstrations of mixed quality.
//!
//! Unlabeled demonstrations are scored with a leverage value in `[0, 1]`
//! by an anomaly detector fitted to a small labeled expert set. The scores
//! feed a kernel-weighted shaping reward that is added to the adversarial
//! imitation reward during trust-region policy optimization.

pub mod adversarial;
pub mod demo;
pub mod leverage;
pub mod reward;
pub mod trpo;
pub mod tensor;
pub mod sim;
pub mod experiment;
