//! Synthetic two-site cry corpus.
//!
//! Both sites draw cries from the same class-conditional distributions; they
//! differ only in background noise and recording channel.

mod corpus;
mod cry;
mod domain;
mod manifest;

pub use corpus::{
    generate_corpus, ClassAcoustics, Corpus, CorpusClip, CorpusConfig, NoiseClip, SplitFractions,
    SOURCE, TARGET,
};
pub use crate::dsp::{BiquadSpec, FilterKind};
pub use cry::{synth_cry, Contour, CryParams, CONTOUR_DEPTH, PEAK, RAMP_S};
pub use domain::{
    active_mask, apply_domain, channel_only, measured_snr_db, render_noise, DomainProfile,
    NoiseKind,
};
pub use manifest::{
    read_noise_manifest, write_noise_manifest, CorpusManifest, Label, ManifestRow, NoiseRow,
    Split, MANIFEST_COLUMNS, NOISE_COLUMNS,
};
