use std::time::Duration;

use super::{Envelope, Oracle, OracleBackend, OracleRequest, OracleResponse, PROTOCOL_VERSION};
use crate::error::{Error, OracleError, Result};

pub const URL_VAR: &str = "SKILLGRAPH_ORACLE_URL";
pub const DEADLINE_VAR: &str = "SKILLGRAPH_ORACLE_DEADLINE_MS";
pub const RETRIES_VAR: &str = "SKILLGRAPH_ORACLE_RETRIES";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{base}/{kind}`.
    pub base_url: String,
    pub deadline: Duration,
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            deadline: Duration::from_secs(30),
            retries: 2,
        }
    }

    /// Fill deadline and retry count from the environment when set.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(DEADLINE_VAR) {
            let ms: u64 = v
                .parse()
                .map_err(|_| Error::Config(format!("{DEADLINE_VAR}={v} is not a millisecond count")))?;
            self.deadline = Duration::from_millis(ms);
        }
        if let Ok(v) = std::env::var(RETRIES_VAR) {
            self.retries = v
                .parse()
                .map_err(|_| Error::Config(format!("{RETRIES_VAR}={v} is not a count")))?;
        }
        Ok(self)
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(URL_VAR).map_err(|_| Error::Config(format!("{URL_VAR} is not set")))?;
        RemoteConfig::new(url).with_env_overrides()
    }
}

/// JSON-over-HTTP client, one endpoint per request kind.
pub struct RemoteOracle {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.deadline).build();
        RemoteOracle { config, agent }
    }

    pub fn into_oracle(self) -> Oracle {
        let retries = self.config.retries;
        Oracle::new(Box::new(self), retries)
    }
}

impl OracleBackend for RemoteOracle {
    fn call(&mut self, request: &OracleRequest) -> Result<(OracleResponse, u64), OracleError> {
        let url = format!("{}/{}", self.config.base_url, request.kind());
        let envelope = Envelope {
            format_version: PROTOCOL_VERSION,
            body: request,
            cost_units: 0,
        };
        let response = match self.agent.post(&url).send_json(&envelope) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                let msg = format!("{url} answered {code}: {detail}");
                // server trouble is worth another try; a rejected request is not
                return Err(if code >= 500 || code == 408 || code == 429 {
                    OracleError::Transport(msg)
                } else {
                    OracleError::Protocol(msg)
                });
            }
            Err(e) => return Err(OracleError::Transport(format!("{url}: {e}"))),
        };
        let body = response
            .into_string()
            .map_err(|e| OracleError::Transport(format!("{url}: reading body: {e}")))?;
        let envelope: Envelope<OracleResponse> = serde_json::from_str(&body)
            .map_err(|e| OracleError::Protocol(format!("{url}: malformed response: {e}")))?;
        if envelope.format_version != PROTOCOL_VERSION {
            return Err(OracleError::Protocol(format!(
                "{url}: format_version {} (expected {PROTOCOL_VERSION})",
                envelope.format_version
            )));
        }
        Ok((envelope.body, envelope.cost_units))
    }
}
