//! Neural building blocks of the unfolded network.

mod attention;
mod conv;
mod linear;
mod swin;
mod window;

pub use attention::{relative_position_index, WindowAttention};
pub use conv::{Conv2d, Conv3d, ConvTranspose2d};
pub use linear::{LayerNorm, Linear};
pub use swin::SwinLayer;
pub use window::{
    expand_token_map, shifted_window_mask, window_partition, window_partition_map, window_reverse,
    window_reverse_map, WindowPlan,
};

/// `√(1/fan_in)`, the half-width of the uniform weight init.
pub(crate) fn init_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}
