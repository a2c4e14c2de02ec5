//! DAG-based atomic broadcast with a leader per round, committing through
//! either first proposals or DAG votes.

pub mod dag;
pub mod node;
pub mod transport;
pub mod vertex;

pub use dag::Dag;
pub use node::{order_digest, NodeEvent, NodeOutput, SailfishConfig, SailfishMessage, SailfishNode, TimerRequest};
pub use transport::{TransportOutput, VertexTransport};
pub use vertex::{leader, Round, Vertex, VertexError, VertexRef};
