//! Trial data model, file format, summaries and the synthetic generator.

mod io;
mod summary;
mod synth;
mod trial;
mod vec3;

pub use io::{
    load_dataset, load_trial, parse_trial, trial_file_name, trial_to_string, write_dataset, write_trial, DataError,
    TRIAL_SUFFIX,
};
pub use summary::{dataset_summary, palm_travel, EmptyDataset, Range, SummaryStats, LENGTH_BIN};
pub use synth::{synth_family, synth_trial, ConfigError, FamilyConfig, HandPose, SynthConfig};
pub use trial::{Dataset, Frame, HandFrame, SizeLabel, Trial, TrialMeta, ValidationError, UNIT_TOLERANCE};
pub use vec3::Vec3;
