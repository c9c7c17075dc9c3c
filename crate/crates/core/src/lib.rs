//! Simulation stack for catching a thrown object with the front legs of a quadruped.
//!
//! The pipeline runs perception ([`frames`], [`ballistics`]), trajectory fitting ([`predictor`]),
//! catch-point selection ([`selector`], [`gmm`]) and front-leg control ([`leg`]) inside a
//! closed-loop simulator ([`sim`]). [`experiments`] batches episodes and reports catch rates.

pub mod ballistics;
pub mod frames;
pub mod gmm;
pub mod predictor;
pub mod roots;
pub mod selector;
pub mod leg;
pub mod sim;
pub mod experiments;
