use std::fmt::Debug;

use bytes::Bytes;

use super::vertex::Round;
use crate::rbc::{RbcHub, RbcMessage};
use crate::types::{InstanceId, PartyId, Violation};

/// What a transport produced for one input.
#[derive(Debug, Clone)]
pub struct TransportOutput<M> {
    pub messages: Vec<(PartyId, M)>,
    /// Reliable-broadcast deliveries, one per instance.
    pub delivered: Vec<(InstanceId, Bytes)>,
    /// The first proposal seen for an instance, before any delivery.
    pub first_proposals: Vec<(InstanceId, Bytes)>,
    pub violations: Vec<Violation>,
}

impl<M> Default for TransportOutput<M> {
    fn default() -> Self {
        TransportOutput {
            messages: Vec::new(),
            delivered: Vec::new(),
            first_proposals: Vec::new(),
            violations: Vec::new(),
        }
    }
}

/// Reliable broadcast of one vertex per (source, round).
///
/// Instance ids are `(source, round)`. Besides deliveries the transport must
/// surface the first proposal it accepts for each instance, which the
/// first-message commit rule consumes.
pub trait VertexTransport {
    type Message: Clone + Debug;

    fn broadcast(&mut self, round: Round, payload: Bytes) -> TransportOutput<Self::Message>;

    fn handle(&mut self, from: PartyId, msg: Self::Message) -> TransportOutput<Self::Message>;
}

impl VertexTransport for RbcHub {
    type Message = RbcMessage;

    fn broadcast(&mut self, round: Round, payload: Bytes) -> TransportOutput<RbcMessage> {
        let messages = RbcHub::broadcast(self, round, payload).unwrap_or_default();
        TransportOutput { messages, ..TransportOutput::default() }
    }

    fn handle(&mut self, from: PartyId, msg: RbcMessage) -> TransportOutput<RbcMessage> {
        let step = RbcHub::handle(self, from, msg);
        TransportOutput {
            messages: step.messages,
            delivered: step.deliveries.into_iter().map(|(id, d)| (id, d.payload)).collect(),
            first_proposals: step.first_proposals,
            violations: step.violations,
        }
    }
}
