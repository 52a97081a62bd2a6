//! Reverse-mode autodiff and the residual dense network.

pub mod checkpoint;
pub mod rdn;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use rdn::{rdb_forward, rdn_forward, rdn_forward_on_tape, InitOptions, NetworkParams, ParamNodes, RDNConfig};
pub use tape::{CustomOp, Gradients, NodeId, Tape, Tensor};
