use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatRequest, LlmBackend, LlmError, LlmResponse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportEvent {
    Start(String),
    End(String),
}

/// Wraps a backend and records every call that reaches it: a call counter,
/// an ordered start/end log, and the peak number of concurrent calls.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    log: Mutex<Vec<TransportEvent>>,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn log(&self) -> Vec<TransportEvent> {
        self.log.lock().unwrap().clone()
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.peak_in_flight.store(0, Ordering::SeqCst);
        self.log.lock().unwrap().clear();
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for CountingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let hash = req.request_hash();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.log
            .lock()
            .unwrap()
            .push(TransportEvent::Start(hash.clone()));
        let result = self.inner.complete(req);
        self.log.lock().unwrap().push(TransportEvent::End(hash));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
