//! Camera-based pulse-rate and pulse-rate-variability estimation.
//!
//! Frames of a face video are cropped to the face, reduced to a 20x20 grid of
//! green intensities and fed, one frame at a time, to a small fully connected
//! network. Labels come from the periodogram of a contact PPG recorded at the
//! same time. [`synth`] builds cohorts with a known pulse so the whole path
//! can be checked end to end, and [`eval`] runs leave-one-subject-out
//! cross-validation.

pub mod eval;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod spectral;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
