//! Audio ingestion and log-mel feature extraction.

mod feature_file;
mod mel;
mod wav;

pub use feature_file::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC};
pub use mel::{
    frame_count, hz_to_mel, log_mel_filterbank, mel_center_frequencies, mel_to_hz, AcousticFeatures,
    LogMelExtractor, ENERGY_FLOOR, FFT_SIZE, HOP_SAMPLES, MEL_HIGH_HZ, MEL_LOW_HZ, NUM_MEL_BINS, SAMPLE_RATE,
    WINDOW_SAMPLES,
};
pub use wav::{encode_wav, load_wav, parse_wav, write_wav, Waveform};
