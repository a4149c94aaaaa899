use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use super::{complete, ChatRequest, LlmBackend, LlmError, LlmResponse};

/// Some slots of a batch failed. `results` is in input order.
#[derive(Debug, Error)]
#[error("{} of {} batch requests failed", self.failures().count(), results.len())]
pub struct BatchPartialFailure {
    pub results: Vec<Result<LlmResponse, LlmError>>,
}

impl BatchPartialFailure {
    pub fn failures(&self) -> impl Iterator<Item = (usize, &LlmError)> {
        self.results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
    }
}

/// Resolves every request with at most `max_in_flight` outstanding at once.
/// Each slot carries its own outcome; one failure never aborts the rest.
pub fn batch_complete_each<B: LlmBackend + ?Sized>(
    reqs: &[ChatRequest],
    backend: &B,
    max_in_flight: usize,
) -> Vec<Result<LlmResponse, LlmError>> {
    if max_in_flight == 0 {
        return reqs
            .iter()
            .map(|_| Err(LlmError::InvalidRequest("max_in_flight must be >= 1".into())))
            .collect();
    }
    let backend: &dyn LlmBackend = &DynRef(backend);
    let slots: Vec<Mutex<Option<Result<LlmResponse, LlmError>>>> =
        reqs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.min(reqs.len());

    if workers <= 1 {
        for (req, slot) in reqs.iter().zip(&slots) {
            *slot.lock().unwrap() = Some(complete(req, backend));
        }
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = reqs.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(complete(req, backend));
                });
            }
        });
    }

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

pub fn batch_complete<B: LlmBackend + ?Sized>(
    reqs: &[ChatRequest],
    backend: &B,
    max_in_flight: usize,
) -> Result<Vec<LlmResponse>, BatchPartialFailure> {
    let results = batch_complete_each(reqs, backend, max_in_flight);
    if results.iter().all(Result::is_ok) {
        Ok(results.into_iter().map(Result::unwrap).collect())
    } else {
        Err(BatchPartialFailure { results })
    }
}

struct DynRef<'a, B: ?Sized>(&'a B);

impl<B: LlmBackend + ?Sized> LlmBackend for DynRef<'_, B> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        self.0.complete(req)
    }
}
