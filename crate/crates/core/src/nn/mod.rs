//! Minimal neural-network toolkit: reverse-mode autodiff, convolution
//! layers, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use adam::{cosine_lr, Adam, AdamConfig, Moments};
pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradients, perturb_params, GradCheckReport};
pub use graph::{charbonnier_value, CustomBackward, Gradients, Graph, Var};
pub use layers::{run_blocks, Conv2d, ResBlock};
pub use params::{Init, Param, ParamId, ParamStore, LEAKY_SLOPE};
