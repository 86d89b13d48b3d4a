use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ados_core::prompt::PromptBundle;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{GatewayError, ModelEndpoint};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub url: String,
    pub model_name: String,
}

impl From<&ModelEndpoint> for EndpointDescriptor {
    fn from(ep: &ModelEndpoint) -> Self {
        EndpointDescriptor {
            url: ep.url(),
            model_name: ep.model_name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    pub status: Option<u16>,
    pub error: Option<String>,
    pub latency_ms: u64,
    /// Sleep taken after this attempt before the next one.
    pub backoff_ms: u64,
}

/// Full audit trail of one logical request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub request_id: String,
    pub endpoint: EndpointDescriptor,
    pub prompt_digest: String,
    pub request_body: serde_json::Value,
    /// Raw body of the last response, if any.
    pub response_body: Option<String>,
    /// Assistant text; present only on success.
    pub response_text: Option<String>,
    pub error: Option<String>,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub attempts: Vec<AttemptLog>,
    pub timestamp: String,
}

impl ExchangeRecord {
    pub fn succeeded(&self) -> bool {
        self.response_text.is_some()
    }
}

/// Hex SHA-256 over the system and user text.
pub fn prompt_digest(bundle: &PromptBundle) -> String {
    let mut h = Sha256::new();
    h.update(bundle.system_text.as_bytes());
    h.update([0u8]);
    h.update(bundle.user_text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `raw_llm/<request_id>.json` files under a run directory.
#[derive(Debug, Clone)]
pub struct ExchangeStore {
    dir: PathBuf,
}

impl ExchangeStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ExchangeStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, request_id: &str) -> PathBuf {
        self.dir.join(format!("{request_id}.json"))
    }

    pub fn load(&self, request_id: &str) -> Result<Option<ExchangeRecord>, GatewayError> {
        let path = self.path_for(request_id);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Store(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes a record. An existing successful record is kept unless
    /// `replace` is set; failed records are always superseded.
    pub fn save(&self, record: &ExchangeRecord, replace: bool) -> Result<PathBuf, GatewayError> {
        let store_err = |e: std::io::Error| GatewayError::Store(e.to_string());
        fs::create_dir_all(&self.dir).map_err(store_err)?;
        let path = self.path_for(&record.request_id);
        if !replace {
            if let Some(existing) = self.load(&record.request_id)? {
                if existing.succeeded() {
                    return Err(GatewayError::Store(format!(
                        "{} already holds a successful exchange",
                        path.display()
                    )));
                }
            }
        }
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(store_err)?;
        let body = serde_json::to_string_pretty(record).map_err(|e| GatewayError::Store(e.to_string()))?;
        f.write_all(body.as_bytes()).map_err(store_err)?;
        f.write_all(b"\n").map_err(store_err)?;
        f.sync_all().map_err(store_err)?;
        fs::rename(&tmp, &path).map_err(store_err)?;
        Ok(path)
    }
}
