//! Service configuration file (TOML).
//!
//! ```toml
//! [engine.retriever]
//! k = 8
//!
//! [engine.map_manager]
//! attempts = 5
//! max_depth = 3
//!
//! [http]
//! endpoint = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! planner_model = "gpt-4o"
//! utility_model = "gpt-4o-mini"
//! ```
//!
//! Every field is optional.

use std::path::Path;

use serde::Deserialize;

use cokg_core::provider::HttpConfig;
use cokg_core::session::EngineConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub http: HttpConfig,
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c = ServiceConfig::from_toml("[engine.map_manager]\nmax_depth = 2\n[http]\nplanner_model = \"big\"\n").unwrap();
        assert_eq!(c.engine.map_manager.max_depth, 2);
        assert_eq!(c.engine.map_manager.attempts, 5);
        assert_eq!(c.http.planner_model, "big");
        assert_eq!(c.http.utility_model, "gpt-4o-mini");
        assert!(ServiceConfig::from_toml("[nope]\n").is_err());
    }
}
