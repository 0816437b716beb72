//! Adversarially robust unsupervised domain adaptation by meta self-training,
//! at desk scale.
//!
//! The pipeline pre-trains a source model with a margin-disparity objective on
//! labeled source and (mask-augmented) unlabeled target data, then alternates
//! adversarial training of a target model on the source model's pseudo-labels
//! with a meta step that tunes the source model by the target model's loss on
//! labeled source data.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod selftrain;
pub mod train;
pub mod uda;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::{Rng, Rngs, Stream};
pub use scalar::Scalar;

pub type Model64 = nn::Model<f64>;
pub type Model32 = nn::Model<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type AttackBudget64 = attacks::AttackBudget<f64>;
pub type AttackBudget32 = attacks::AttackBudget<f32>;
pub type DomainPair64 = data::DomainPair<f64>;
pub type DomainPair32 = data::DomainPair<f32>;
pub type SelfTrainConfig64 = selftrain::SelfTrainConfig<f64>;
pub type SelfTrainConfig32 = selftrain::SelfTrainConfig<f32>;
pub type MddConfig64 = uda::MddConfig<f64>;
pub type MddConfig32 = uda::MddConfig<f32>;
