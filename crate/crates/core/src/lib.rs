//! Metal-aware active MRI acquisition laboratory.
//!
//! Paired clean/metal k-space simulation, a small reverse-mode autodiff
//! engine, the line-selection MDP, PPO/DQN acquisition policies, a residual
//! U-Net for metal artifact reduction and their co-adaptive training.

pub mod dataset;
pub mod diffcore;
pub mod env;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod image;
pub mod marnet;
pub mod metalsim;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod policies;
pub mod trainer;

pub use error::{MascError, Result};
pub use fourier::{KSpaceGrid, Layout, LineMask};
pub use image::Image;
pub use metalsim::PairedSample;
pub use num_complex::Complex32;
