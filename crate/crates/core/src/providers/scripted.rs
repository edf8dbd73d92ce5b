use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

type Responder = dyn Fn(&ChatRequest, usize) -> Result<String, BackendError> + Send + Sync;

/// In-process backend driven by a closure. Keeps every request it sees so
/// tests can inspect the exact transcript of each session.
pub struct ScriptedBackend {
    responder: Box<Responder>,
    calls: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("calls", &self.calls.load(Ordering::SeqCst))
            .finish_non_exhaustive()
    }
}

impl ScriptedBackend {
    /// `responder` receives the request and the zero-based call number.
    pub fn from_fn(
        responder: impl Fn(&ChatRequest, usize) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedBackend {
            responder: Box::new(responder),
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Replies in order; once exhausted, repeats the last entry.
    pub fn sequence(script: Vec<Result<String, BackendError>>) -> Self {
        assert!(!script.is_empty(), "script must have at least one entry");
        Self::from_fn(move |_, n| script[n.min(script.len() - 1)].clone())
    }

    /// Replies with the user message.
    pub fn echo() -> Self {
        Self::from_fn(|req, _| Ok(req.user_text().to_string()))
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests
            .lock()
            .expect("scripted backend poisoned")
            .clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .expect("scripted backend poisoned")
            .push(request.clone());
        (self.responder)(request, n).map(|text| ChatReply { text })
    }
}
