//! Exact conversion of causal Toeplitz kernels into diagonal state-space
//! models, plus the machinery to run and compare both forms.
//!
//! * [`dft`]: unitary DFT of any length (radix-2 or Bluestein).
//! * [`toeplitz`]: kernels, naive and FFT application, error metrics.
//! * [`conversion`]: closed-form conversion, reconstruction, truncation,
//!   decayed conversion and the gradient-descent baseline.
//! * [`ssm`]: the diagonal recurrence.
//! * [`inference`]: origin / cache / ssm streaming strategies over a stacked
//!   mixer.
//! * [`bench`]: timing and memory-accounting sweeps.

pub mod bench;
pub mod conversion;
pub mod dft;
pub mod error;
pub mod inference;
pub mod ssm;
pub mod toeplitz;

pub use conversion::{
    augment, augmented_spectrum, convert_with_decay, etsc_convert, gradient_convert, reconstruct,
    truncate, GradientConfig, GradientOutcome, GradientParams, SsmModes, Truncation,
};
pub use error::{EtscError, Result};
pub use inference::{open_session, parity_report, StackedMixer, Strategy, StreamSession};
pub use ssm::{init_state, scan, ChannelBank, SsmState};
pub use toeplitz::{relative_error, Extension, ToeplitzKernel};

pub use num_complex::Complex64;
