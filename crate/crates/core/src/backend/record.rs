use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{Backend, BackendError, CompletionReply, CompletionRequest, ScriptEntry};

/// Append-only recording file. One sink can be shared by several recording backends;
/// entries are numbered in the order they are written.
#[derive(Debug)]
pub struct RecordSink {
    state: Mutex<(File, usize)>,
}

impl RecordSink {
    /// Opens `path` for appending. Numbering continues after any existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Arc<Self>, BackendError> {
        let path = path.as_ref();
        let existing = std::fs::read_to_string(path)
            .map(|t| t.lines().filter(|l| !l.trim().is_empty()).count())
            .unwrap_or(0);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(Arc::new(Self {
            state: Mutex::new((file, existing)),
        }))
    }

    fn append(&self, mut entry: ScriptEntry) -> Result<(), BackendError> {
        let mut state = self.state.lock().expect("recording sink poisoned");
        let (file, count) = &mut *state;
        entry.matcher.ordinal = Some(*count + 1);
        let mut line = serde_json::to_string(&entry).map_err(|e| BackendError::Io(e.to_string()))?;
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| BackendError::Io(e.to_string()))?;
        *count += 1;
        Ok(())
    }
}

/// Forwards to an inner backend and appends each exchange as a script entry holding
/// the full prompt, its hash, the tag and the reply. The file replays with a
/// [`super::ScriptedBackend`] in either mode.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Arc<RecordSink>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, sink: Arc<RecordSink>) -> Self {
        Self { inner, sink }
    }

    pub fn create(inner: B, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        Ok(Self::new(inner, RecordSink::open(path)?))
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionReply, BackendError> {
        let reply = self.inner.complete(request)?;
        self.sink.append(ScriptEntry::for_prompt(
            request.tag,
            &request.prompt,
            reply.text.clone(),
        ))?;
        Ok(reply)
    }
}
