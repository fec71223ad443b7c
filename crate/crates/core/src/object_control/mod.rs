//! Training-free object-motion control through spatial cross-attention
//! modulation.
//!
//! Each object is a [`BoxTrajectory`] bound to caption positions. For every
//! frame the query cells inside the object's box get an additive boost
//! toward its tokens (amplification, early timesteps only), and cells
//! outside get `-inf` (suppression, all timesteps).

mod modulation;
mod trajectory;

pub use modulation::{
    bound_region, modulated_cross_attention, modulation_bias, modulation_term, region_indices,
    BlockGroup, ModulationSpec, Placement, DEFAULT_LAMBDA, DEFAULT_TAU,
};
pub use trajectory::{build_box_trajectory, BoxTrajectory};
