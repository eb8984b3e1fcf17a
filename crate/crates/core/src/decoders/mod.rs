//! Output-side networks: additive attention with coverage, the attention
//! LSTM decoder, copy interpolation, the doubly attentive decoder and
//! beam search.

mod attention;
mod beam;
mod decoder;

pub use attention::{AdditiveAttention, AttentionMemory, FrozenMemory, PreparedMemory};
pub use beam::{beam_search, BeamConfig, Hypothesis};
pub use decoder::{
    copy_distribution, CopySwitch, Decoder, DecoderConfig, DecoderState, InitKind, SourceMap,
    StepOutput, ValueState,
};
