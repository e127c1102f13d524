//! Application configuration: backends, loop settings, prompt templates,
//! logging and evaluation, loaded from TOML (or JSON) with every field
//! optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalSettings;
use crate::gateway::GatewayConfig;
use crate::refine::{LoopConfig, PromptTemplates};

pub const DEFAULT_CONFIG_PATH: &str = "idea23d.toml";

/// Template files; the built-in template is used for any omitted path.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    pub gen: Option<PathBuf>,
    pub select: Option<PathBuf>,
    pub feedback: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingConfig {
    /// `error`, `warn`, `info`, `debug` or `trace`.
    pub level: String,
    /// Parent directory for session directories created without `--out`.
    pub session_root: PathBuf,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self { level: "info".into(), session_root: PathBuf::from("sessions") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backends: GatewayConfig,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub templates: TemplatePaths,
    pub logging: LoggingConfig,
    pub eval: EvalSettings,
}

const LEVELS: [&str; 5] = ["error", "warn", "info", "debug", "trace"];

impl AppConfig {
    /// Parse a config file; `.json` files are JSON, anything else TOML.
    /// Relative template paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: AppConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.templates.gen, &mut cfg.templates.select, &mut cfg.templates.feedback].into_iter().flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !LEVELS.contains(&self.logging.level.as_str()) {
            return Err(Error::Config(format!("unknown log level {:?}", self.logging.level)));
        }
        for p in [&self.templates.gen, &self.templates.select, &self.templates.feedback].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("template file {} does not exist", p.display())));
            }
        }
        if self.eval.workers == 0 {
            return Err(Error::Config("eval.workers must be >= 1".into()));
        }
        self.loop_cfg.validate()
    }

    /// Built-in templates overridden by any configured files.
    pub fn prompt_templates(&self) -> Result<PromptTemplates> {
        let mut t = PromptTemplates::default();
        let read =
            |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("template {}: {e}", p.display())));
        if let Some(p) = &self.templates.gen {
            t.gen = read(p)?;
        }
        if let Some(p) = &self.templates.select {
            t.select = read(p)?;
        }
        if let Some(p) = &self.templates.feedback {
            t.feedback = read(p)?;
        }
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "").unwrap();
        let cfg = AppConfig::load(&p).unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.loop_cfg.num_draft, 3);
        assert_eq!(cfg.loop_cfg.max_iters, 5);
    }

    #[test]
    fn partial_toml_and_template_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("sel.txt"), "pick among {n} for {idea_text}").unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "[loop]\nmax_iters = 2\n[loop.render]\nwidth = 64\nheight = 64\n[templates]\nselect = \"sel.txt\"\n[backends.lmm.policy]\nmax_retries = 0\n",
        )
        .unwrap();
        let cfg = AppConfig::load(&p).unwrap();
        assert_eq!(cfg.loop_cfg.max_iters, 2);
        assert_eq!(cfg.loop_cfg.render.width, 64);
        assert_eq!(cfg.backends.lmm.policy.max_retries, Some(0));
        assert_eq!(cfg.prompt_templates().unwrap().select, "pick among {n} for {idea_text}");
    }

    #[test]
    fn bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        for bad in [
            "[loop]\nnum_draft = 0\n",
            "[templates]\ngen = \"nope.txt\"\n",
            "[logging]\nlevel = \"loud\"\n",
            "bogus = 1\n",
        ] {
            std::fs::write(&p, bad).unwrap();
            assert!(matches!(AppConfig::load(&p), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn json_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"loop": {"num_draft": 2}, "eval": {"workers": 1}}"#).unwrap();
        let cfg = AppConfig::load(&p).unwrap();
        assert_eq!((cfg.loop_cfg.num_draft, cfg.eval.workers), (2, 1));
    }
}
