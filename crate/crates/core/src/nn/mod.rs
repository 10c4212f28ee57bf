//! Minimal neural-network building blocks on top of `candle-core`.
//!
//! Parameters live in a named [`ParamStore`] and are initialized from an explicit seeded
//! generator, so that a model built twice from the same seed is bitwise identical.

mod adam;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    elu, leaky_relu, sigmoid, softmax, softplus, split_steps, Conv2d, Conv2dSpec, Linear, Lstm, UpConv2d,
};
pub use params::{Init, ParamBuilder, ParamStore};
