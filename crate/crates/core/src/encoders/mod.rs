//! Input-side networks: embeddings, recurrent cells, sequential and DAG
//! LSTMs, edge representations and the graph recurrent network.

mod cells;
mod dag_lstm;
mod edge;
mod embed;
mod grn;
mod seq;

pub use cells::{CandidateActivation, GruCell, LstmCell, MessageLstmCell, Predecessor};
pub use dag_lstm::{dag_lstm_encode, BiDagEncoding, BiDagLstm, DagEncoding, DagInputs};
pub use edge::{EdgeInputs, EdgeRepresentation};
pub use embed::{embed_tokens, read_word_vectors, Affine, EmbeddingTable, Vocab, BOS, EOS, UNK};
pub use grn::{Aggregator, GnnConfig, GraphState, Grn, Updater};
pub use seq::{run_lstm, BiLstm, CharEncoder, EncoderOutput};
