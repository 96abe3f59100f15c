//! Training-free relighting guidance for dynamic scenes under camera motion.
//!
//! A flow-matching solver is steered towards a relit, geometry-consistent
//! target built from two priors: a geometric prior that preserves camera and
//! object motion, and a relighting prior that supplies the new illumination.
//! Both priors here are analytic stand-ins so every stage can be tested
//! against closed forms.

pub mod camera;
pub mod coherence;
pub mod config;
pub mod error;
pub mod filter;
pub mod guidance;
pub mod io;
pub mod lighting;
pub mod metrics;
pub mod pipeline;
pub mod priors;
pub mod scenes;
pub mod schedule;
pub mod tca;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{FeatureSequence, LatentVideo, Shape, Tensor4, VideoTensor};
