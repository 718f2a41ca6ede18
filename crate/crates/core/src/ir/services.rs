use crate::model::Endpoint;
use crate::time::SimTime;

/// Reply to an outbound EMITPKT.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceReply {
    pub bytes: Vec<u8>,
    /// Virtual time the issuing thread waits for the reply.
    pub latency: SimTime,
}

/// External endpoints reachable by EMITPKT (e.g. the KV store).
pub trait Services {
    fn call(&mut self, endpoint: Endpoint, request: &[u8]) -> ServiceReply;
}

/// Every endpoint answers immediately with an empty reply.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoServices;

impl Services for NoServices {
    fn call(&mut self, _endpoint: Endpoint, _request: &[u8]) -> ServiceReply {
        ServiceReply::default()
    }
}

/// Echoes the request back after a fixed latency.
#[derive(Debug, Clone, Copy, Default)]
pub struct Echo {
    pub latency: SimTime,
}

impl Services for Echo {
    fn call(&mut self, _endpoint: Endpoint, request: &[u8]) -> ServiceReply {
        ServiceReply {
            bytes: request.to_vec(),
            latency: self.latency,
        }
    }
}

impl<S: Services + ?Sized> Services for &mut S {
    fn call(&mut self, endpoint: Endpoint, request: &[u8]) -> ServiceReply {
        (**self).call(endpoint, request)
    }
}
