//! Procedural motions, synthesized sensor signals, contact labels, trial
//! weighting and the dataset container.

mod dataset;
mod generate;
mod motion;
mod synth;

pub(crate) use dataset::hash_bytes;
pub use dataset::{generate_corpus, generate_trial, CorpusConfig, Dataset, Trial, DATASET_MAGIC, DATASET_VERSION};
pub use generate::{generate_motion, GeneratedMotion, MotionKind, MotionParams, GEN_RATE};
pub use motion::MotionSequence;
pub use synth::{
    add_acceleration_noise, compute_trial_weights, contact_label, first_instant, kinetic_energy, label_contacts, moving_average,
    sample_instants, segment_com, stance_at_instants, synthesize_imu, trial_energy, weights_from_energies,
    SynthesizedImu, TrialWeight, WindowSampler, CONTACT_SPEED, DECIMATE, SMOOTH_HALF, SMOOTH_WIDTH,
};
