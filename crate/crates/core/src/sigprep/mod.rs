//! From response records to model inputs: window augmentation,
//! smoothing, magnitude spectra on a common grid, and channel stacking.

mod dataset;
mod spectral;
mod window;

pub use dataset::{
    assemble_dataset, read_dataset, window_input, write_dataset, Dataset, PrepConfig, Sample,
    CHANNELS,
};
pub use spectral::{resample_spectrum, resample_spectrum_padded, smooth, spectrum, stack_channels};
pub use window::{sliding_windows, Window};
