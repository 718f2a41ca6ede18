//! One interface over the NIC emulator and the host baseline.

use super::host::HostBackend;
use crate::compiler::Firmware;
use crate::emulator::{LoadError, Nic, NicOutput, TraceRecord};
use crate::ir::Services;
use crate::model::{Endpoint, LambdaFrame};
use crate::time::SimTime;
use crate::MLProgram;

pub trait Backend {
    fn ingest(&mut self, at: SimTime, src: Endpoint, frame: LambdaFrame);
    fn next_event_time(&self) -> Option<SimTime>;
    fn step(&mut self) -> Vec<NicOutput>;
    fn take_trace(&mut self) -> Vec<TraceRecord>;
    /// Installs new code at `at`; returns when the backend serves again.
    fn load(&mut self, fw: &Firmware, prog: &MLProgram, at: SimTime) -> Result<SimTime, LoadError>;
}

impl<S: Services> Backend for Nic<S> {
    fn ingest(&mut self, at: SimTime, src: Endpoint, frame: LambdaFrame) {
        Nic::ingest(self, at, src, frame)
    }

    fn next_event_time(&self) -> Option<SimTime> {
        Nic::next_event_time(self)
    }

    fn step(&mut self) -> Vec<NicOutput> {
        Nic::step(self)
    }

    fn take_trace(&mut self) -> Vec<TraceRecord> {
        Nic::take_trace(self)
    }

    fn load(&mut self, fw: &Firmware, _prog: &MLProgram, at: SimTime) -> Result<SimTime, LoadError> {
        self.load_firmware(fw.clone(), at)
    }
}

impl<S: Services> Backend for HostBackend<S> {
    fn ingest(&mut self, at: SimTime, src: Endpoint, frame: LambdaFrame) {
        HostBackend::ingest(self, at, src, frame)
    }

    fn next_event_time(&self) -> Option<SimTime> {
        HostBackend::next_event_time(self)
    }

    fn step(&mut self) -> Vec<NicOutput> {
        HostBackend::step(self)
    }

    fn take_trace(&mut self) -> Vec<TraceRecord> {
        HostBackend::take_trace(self)
    }

    fn load(&mut self, _fw: &Firmware, prog: &MLProgram, at: SimTime) -> Result<SimTime, LoadError> {
        Ok(self.load_program(prog.clone(), at))
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn ingest(&mut self, at: SimTime, src: Endpoint, frame: LambdaFrame) {
        (**self).ingest(at, src, frame)
    }

    fn next_event_time(&self) -> Option<SimTime> {
        (**self).next_event_time()
    }

    fn step(&mut self) -> Vec<NicOutput> {
        (**self).step()
    }

    fn take_trace(&mut self) -> Vec<TraceRecord> {
        (**self).take_trace()
    }

    fn load(&mut self, fw: &Firmware, prog: &MLProgram, at: SimTime) -> Result<SimTime, LoadError> {
        (**self).load(fw, prog, at)
    }
}
