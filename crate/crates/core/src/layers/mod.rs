//! Learnable blocks: metadata feature expansion, positional concatenation,
//! the selective-scan sequence block and the spline (KAN) unit.

pub mod kan;
pub mod mamba;
pub mod metafp;

pub use kan::{bspline_basis, kan_forward, kan_reg_loss, KanParams, KnotGrid, SplineParams};
pub use mamba::{
    causal_conv, mamba_forward, selective_scan, ConvParams, MambaDims, MambaParams, ScanInputs,
    ScanMode, SsmParams,
};
pub use metafp::{
    metafp_forward, positional_concat, positions, MetaFpParams, PosConcatParams,
};

use rand::Rng;

use crate::numerics::{Real, Tensor};

/// `U(-bound, bound)` entries.
pub(crate) fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}
