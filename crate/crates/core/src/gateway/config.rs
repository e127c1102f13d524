//! Backend selection, loaded from the application config file.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::http::{HttpEmbed, HttpEndpoint, HttpI23d, HttpLmm, HttpMatting, HttpT2i};
use super::mock::{ConceptEmbedder, ConceptLmm, ConceptT2i, ExtrudeI23d, I23dShape};
use super::{BackendPolicy, Gateway};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Per-field overrides on top of [`BackendPolicy::default`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverrides {
    pub timeout_s: Option<f64>,
    pub max_retries: Option<u32>,
    pub backoff_base_s: Option<f64>,
    pub parallel_limit: Option<usize>,
}

impl PolicyOverrides {
    pub fn resolve(&self) -> BackendPolicy {
        let d = BackendPolicy::default();
        BackendPolicy {
            timeout_s: self.timeout_s.unwrap_or(d.timeout_s),
            max_retries: self.max_retries.unwrap_or(d.max_retries),
            backoff_base_s: self.backoff_base_s.unwrap_or(d.backoff_base_s),
            parallel_limit: self.parallel_limit.unwrap_or(d.parallel_limit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    pub url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub model_name: Option<String>,
    #[serde(default)]
    pub policy: PolicyOverrides,
    /// Mock flavor; for image-to-3D `extrude` (default) or `primitive`.
    pub mock_variant: Option<String>,
}

impl BackendConfig {
    fn endpoint(&self, role: &str) -> Result<HttpEndpoint> {
        let url = self.url.clone().ok_or_else(|| Error::Config(format!("{role}: http backend requires url")))?;
        let api_key = match &self.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("{role}: environment variable {var} is not set")))?,
            ),
            None => None,
        };
        HttpEndpoint::new(url, self.model_name.clone().unwrap_or_default(), api_key, self.policy.resolve().timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub lmm: BackendConfig,
    #[serde(default)]
    pub t2i: BackendConfig,
    #[serde(default)]
    pub i23d: BackendConfig,
    #[serde(default)]
    pub embed: BackendConfig,
    /// External background removal; the built-in heuristic when absent.
    pub matting: Option<BackendConfig>,
}

impl GatewayConfig {
    pub fn build(&self) -> Result<Gateway> {
        let mut b = Gateway::builder()
            .lmm_policy(self.lmm.policy.resolve())
            .t2i_policy(self.t2i.policy.resolve())
            .i23d_policy(self.i23d.policy.resolve())
            .embed_policy(self.embed.policy.resolve());
        b = match self.lmm.kind {
            BackendKind::Mock => b.lmm(Arc::new(ConceptLmm)),
            BackendKind::Http => b.lmm(Arc::new(HttpLmm(self.lmm.endpoint("lmm")?))),
        };
        b = match self.t2i.kind {
            BackendKind::Mock => b.t2i(Arc::new(ConceptT2i::default())),
            BackendKind::Http => b.t2i(Arc::new(HttpT2i(self.t2i.endpoint("t2i")?))),
        };
        b = match self.i23d.kind {
            BackendKind::Mock => {
                let shape = match self.i23d.mock_variant.as_deref() {
                    None | Some("extrude") => I23dShape::Extrude,
                    Some("primitive") => I23dShape::HashedPrimitive,
                    Some(other) => return Err(Error::Config(format!("i23d: unknown mock_variant {other}"))),
                };
                b.i23d(Arc::new(ExtrudeI23d { shape, ..Default::default() }))
            }
            BackendKind::Http => b.i23d(Arc::new(HttpI23d(self.i23d.endpoint("i23d")?))),
        };
        b = match self.embed.kind {
            BackendKind::Mock => b.embed(Arc::new(ConceptEmbedder::default())),
            BackendKind::Http => b.embed(Arc::new(HttpEmbed(self.embed.endpoint("embed")?))),
        };
        if let Some(m) = &self.matting {
            match m.kind {
                BackendKind::Mock => {}
                BackendKind::Http => b = b.matting(Arc::new(HttpMatting(m.endpoint("matting")?)), m.policy.resolve()),
            }
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_mocks() {
        let cfg: GatewayConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.lmm.kind, BackendKind::Mock);
        assert!(cfg.build().is_ok());
    }

    #[test]
    fn http_requires_url_and_secret() {
        let cfg: GatewayConfig = toml::from_str("[lmm]\nkind = \"http\"\n").unwrap();
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
        let cfg: GatewayConfig = toml::from_str(
            "[lmm]\nkind = \"http\"\nurl = \"http://127.0.0.1:1/\"\napi_key_env = \"IDEA23D_TEST_SURELY_UNSET\"\n",
        )
        .unwrap();
        let err = cfg.build().err().unwrap();
        assert!(err.to_string().contains("IDEA23D_TEST_SURELY_UNSET"));
    }

    #[test]
    fn policy_overrides_merge() {
        let cfg: GatewayConfig = toml::from_str("[t2i.policy]\nparallel_limit = 2\n").unwrap();
        let p = cfg.t2i.policy.resolve();
        assert_eq!(p.parallel_limit, 2);
        assert_eq!(p.max_retries, 2);
    }
}
