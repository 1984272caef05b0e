//! Small sequential networks and the reverse-mode tape they run on.

pub mod checkpoint;
pub mod rnn;
pub mod tape;

pub use rnn::{Activation, Bound, NetConfig, SeqNetParams};
pub use tape::{Gradients, Mat, NodeId, Tape};
