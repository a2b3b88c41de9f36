//! Data pipeline: highD-format ingestion, state-action pair extraction,
//! splitting/normalization/oversampling, the on-disk sample store, and the
//! synthetic generator whose conditional quantiles are known analytically.

mod highd;
mod sample;
mod split;
mod store;
mod synth;

pub use highd::{extract_pairs, parse_highd, ExtractOptions, SkipReport, TrackRecord};
pub use sample::{
    derive_thw, derive_ttc, Action, ActionDims, LaneContext, Normalizer, Sample, StateFeatures,
    DEFAULT_TIME_CAP,
};
pub use split::{action_histogram, oversample, split_dataset, DatasetSplit, OversampleReport};
pub use store::{
    read_json, read_split_csv, write_json, write_split_csv, DatasetManifest, MANIFEST_VERSION,
};
pub use synth::{synth_generate, SyntheticSpec};
