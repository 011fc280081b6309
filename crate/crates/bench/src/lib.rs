//! Shared fixtures for the benchmarks.

use f2ocl_core::{generate_synthetic_stream, EncoderConfig, ModelState, StreamConfig, SyntheticStream, TrainConfig};

/// Default-sized synthetic stream (10 groups of 5 classes).
pub fn stream() -> SyntheticStream {
    generate_synthetic_stream(&StreamConfig::default()).expect("default stream config is valid")
}

/// State trained on the first `batches` batches of [`stream`].
pub fn warm_state(stream: &SyntheticStream, batches: usize, passes: usize) -> ModelState {
    let train = TrainConfig {
        passes,
        ..TrainConfig::default()
    };
    let mut state = ModelState::new(&EncoderConfig::default(), &train).expect("default configs are valid");
    for b in stream.schedule.batches.iter().take(batches) {
        state.process_batch(b).expect("training step");
    }
    state
}
