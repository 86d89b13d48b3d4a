use std::fs;
use std::path::PathBuf;

use ados_core::prompt::PromptBundle;

use crate::record::{prompt_digest, ExchangeStore};
use crate::{Completion, CompletionBackend, GatewayError};

/// Offline backend: stored exchanges first, then canned fixtures.
///
/// Fixtures live at `<fixtures>/<session>/<purpose>.txt` for a request id
/// `<session>__<purpose>`. A stored exchange whose prompt digest differs
/// from the current prompt is refused.
#[derive(Debug, Clone, Default)]
pub struct ReplayGateway {
    store: Option<ExchangeStore>,
    fixtures: Option<PathBuf>,
}

impl ReplayGateway {
    pub fn new(store: Option<ExchangeStore>, fixtures: Option<PathBuf>) -> Self {
        ReplayGateway { store, fixtures }
    }

    fn fixture(&self, request_id: &str) -> Result<Option<String>, GatewayError> {
        let (Some(root), Some((session, purpose))) = (&self.fixtures, request_id.split_once("__")) else {
            return Ok(None);
        };
        let path = root.join(session).join(format!("{purpose}.txt"));
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Store(format!("{}: {e}", path.display()))),
        }
    }
}

impl CompletionBackend for ReplayGateway {
    fn complete(&self, request_id: &str, bundle: &PromptBundle) -> Result<Completion, GatewayError> {
        if let Some(store) = &self.store {
            if let Some(rec) = store.load(request_id)? {
                if let Some(text) = rec.response_text {
                    if rec.prompt_digest != prompt_digest(bundle) {
                        return Err(GatewayError::Store(format!(
                            "stored exchange `{request_id}` was recorded for a different prompt"
                        )));
                    }
                    return Ok(Completion { text, record: None });
                }
            }
        }
        match self.fixture(request_id)? {
            Some(text) => Ok(Completion { text, record: None }),
            None => Err(GatewayError::ReplayMissing(request_id.to_string())),
        }
    }
}
