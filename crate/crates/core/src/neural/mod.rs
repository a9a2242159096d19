//! From-scratch regression networks.
//!
//! [`DenseNet`] is a residual multilayer perceptron with leaky-ReLU hidden
//! layers; [`RecurrentNet`] is a stack of tanh cells (residual-wrapped above
//! the first layer) with a per-step linear readout. Both predict a
//! standardized log-selectivity, train with Adam on mean squared error and
//! share the [`train`] loop.

mod adam;
mod dense;
mod io;
mod recurrent;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState};
pub use dense::{DenseArch, DenseExample, DenseNet, DenseSample, LEAKY_SLOPE};
pub use io::{
    canonical_sequence, read_model, write_latents_csv, ArchRecord, DenseEstimator, LoadedNet, NamedTensor, NetFile,
    RecurrentEstimator, Standardizers, FORMAT_VERSION,
};
pub use recurrent::{RecurrentArch, RecurrentNet, SeqExample, SeqMode, SeqSample};
pub use tensor::{Standardizer, Tensor};
pub use train::{gradients, mse, train, Hyper, StopReason, TrainReport, Trainable};

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.05;
/// Every bias starts here.
pub const INIT_BIAS: f64 = 0.01;

/// Parses `<width>w,<depth>d`, e.g. `100w,1d`.
pub fn parse_arch(spec: &str) -> crate::Result<(usize, usize)> {
    let bad = || crate::Error::InvalidArgument(format!("malformed architecture `{spec}`"));
    let (w, d) = spec.split_once(',').ok_or_else(bad)?;
    let w = w.trim().strip_suffix('w').ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let d = d.trim().strip_suffix('d').ok_or_else(bad)?.parse().map_err(|_| bad())?;
    Ok((w, d))
}
