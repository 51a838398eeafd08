//! Streaming reconstruction: sensor intake, inpainting sampler, step spreads,
//! contact-based root correction and the rolling history.

mod reconstructor;
mod root;
mod sampler;
mod spread;
mod stream;

pub use reconstructor::{
    neutral_frame, outputs_to_motion, reconstruct_trial, trial_measurements, FrameOutput, Reconstructor, SessionConfig,
};
pub use root::{contact_displacements, contact_points, root_correct};
pub use sampler::{inpaint_denoise, SamplerKind};
pub use spread::{StepSpread, DEFAULT_SPREAD_LEN, NAMED_SPREADS};
pub use stream::{
    box_mean, read_input_records, read_output_records, simulate_stream, write_records, InputRecord, OutputRecord,
    RawFrame, SiteRecord, StreamIngest, TimedMeasurement, STREAM_VERSION,
};

#[cfg(test)]
mod tests;
