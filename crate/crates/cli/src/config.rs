//! Run configuration: a JSON file with `${VAR}` interpolation, overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use pda_core::agents::ChangeIntensity;
use pda_core::harness::{Schema, ScoringMode};
use pda_core::model::http::{HttpBackend, HttpConfig};
use pda_core::model::replay::{ReplayBackend, ReplayScript};
use pda_core::model::synthetic::{SyntheticBackend, SyntheticVlmConfig};
use pda_core::model::{BackendHandle, Backends};
use pda_core::pipeline::{Variant, VariantConfig};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// Seeded simulator; the run seed is used.
    Synthetic {
        q_clean: f64,
        q_adv: f64,
        #[serde(default = "binary_labels")]
        candidate_answers: Vec<String>,
        #[serde(default = "correct_label")]
        correct_label: String,
        #[serde(default = "yes")]
        independence: bool,
    },
    /// Recorded transcript; a prompt not in the script is an error.
    Replay { path: PathBuf },
    /// OpenAI-compatible chat-completions endpoint.
    Http {
        base_url: String,
        model: String,
        /// Defaults to `$PDA_API_KEY`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_retries: Option<u32>,
    },
}

fn binary_labels() -> Vec<String> {
    vec!["correct".into(), "wrong".into()]
}

fn correct_label() -> String {
    "correct".into()
}

fn yes() -> bool {
    true
}

/// One spec per role; roles left out use `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrase_agent: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposer: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim_vlm: Option<BackendSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Variant default when absent (5, or 2 for captions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paraphrases: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_atomic: Option<usize>,
    #[serde(default)]
    pub change_intensity: ChangeIntensity,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan_out: Option<usize>,
    #[serde(default)]
    pub fallback_undefended: bool,
    #[serde(default)]
    pub scoring: ScoringMode,
}

fn default_variant() -> Variant {
    Variant::Full
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("empty config is valid")
    }
}

/// Replaces `${NAME}` with the environment variable's value. An unset
/// variable is an error rather than an empty string.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, CliError> {
    let pattern = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid pattern");
    let mut missing = None;
    let out = pattern.replace_all(text, |caps: &regex::Captures<'_>| {
        lookup(&caps[1]).unwrap_or_else(|| {
            missing.get_or_insert_with(|| caps[1].to_owned());
            String::new()
        })
    });
    match missing {
        Some(name) => Err(CliError::Config(format!("environment variable `{name}` is not set"))),
        None => Ok(out.into_owned()),
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let text = interpolate(&raw, |name| std::env::var(name).ok())?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.dataset.as_mut().map(join);
        self.out.as_mut().map(join);
        let b = &mut self.backends;
        for spec in [&mut b.default, &mut b.paraphrase_agent, &mut b.decomposer, &mut b.aggregator, &mut b.judge, &mut b.victim_vlm]
            .into_iter()
            .flatten()
        {
            if let BackendSpec::Replay { path } = spec {
                join(path);
            }
        }
    }

    pub fn variant_config(&self) -> Result<VariantConfig, CliError> {
        let caption = self.schema == Some(Schema::Caption);
        let mut config = if caption { VariantConfig::caption(self.variant) } else { VariantConfig::new(self.variant) };
        if let Some(n) = self.n_paraphrases {
            config = config.with_n(n);
        }
        if let Some(k) = self.k_atomic {
            config = config.with_k(k);
        }
        config.change_intensity = self.change_intensity;
        config.fallback_undefended = self.fallback_undefended;
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    fn role_specs(&self) -> Result<[(&'static str, &BackendSpec); 5], CliError> {
        fn pick<'a>(
            role: &'static str,
            spec: Option<&'a BackendSpec>,
            default: Option<&'a BackendSpec>,
        ) -> Result<(&'static str, &'a BackendSpec), CliError> {
            spec.or(default)
                .map(|s| (role, s))
                .ok_or_else(|| CliError::Config(format!("no backend configured for `{role}` and no default")))
        }
        let b = &self.backends;
        let d = b.default.as_ref();
        Ok([
            pick("paraphrase_agent", b.paraphrase_agent.as_ref(), d)?,
            pick("decomposer", b.decomposer.as_ref(), d)?,
            pick("judge", b.judge.as_ref(), d)?,
            pick("aggregator", b.aggregator.as_ref(), d)?,
            pick("victim_vlm", b.victim_vlm.as_ref(), d)?,
        ])
    }

    /// Builds role bindings; identical specs share one backend instance.
    pub fn build_backends(&self) -> Result<Backends, CliError> {
        let mut built: Vec<(&BackendSpec, BackendHandle)> = Vec::new();
        let mut handles = Vec::with_capacity(5);
        for (role, spec) in self.role_specs()? {
            let handle = match built.iter().find(|(s, _)| *s == spec) {
                Some((_, h)) => h.clone(),
                None => {
                    let h = self.build_one(role, spec)?;
                    built.push((spec, h.clone()));
                    h
                }
            };
            handles.push(handle);
        }
        let [paraphraser, decomposer, judge, aggregator, victim]: [BackendHandle; 5] =
            handles.try_into().expect("five roles");
        Ok(Backends { paraphraser, decomposer, judge, aggregator, victim })
    }

    fn build_one(&self, role: &str, spec: &BackendSpec) -> Result<BackendHandle, CliError> {
        let err = |msg: String| CliError::Config(format!("backend for `{role}`: {msg}"));
        Ok(match spec {
            BackendSpec::Synthetic { q_clean, q_adv, candidate_answers, correct_label, independence } => {
                let seed = self.seed.ok_or_else(|| err("synthetic backends need a seed (--seed or \"seed\")".into()))?;
                let config = SyntheticVlmConfig {
                    candidate_answers: candidate_answers.clone(),
                    correct_label: correct_label.clone(),
                    q_clean: *q_clean,
                    q_adv: *q_adv,
                    seed,
                    independence: *independence,
                };
                BackendHandle::new(SyntheticBackend::new(config).map_err(|e| err(e.to_string()))?)
            }
            BackendSpec::Replay { path } => {
                let script = ReplayScript::load(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
                BackendHandle::new(ReplayBackend::new(format!("replay:{}", path.display()), &script))
            }
            BackendSpec::Http { base_url, model, api_key, timeout_secs, max_retries } => {
                let mut config = HttpConfig::new(base_url, model);
                if let Some(key) = api_key.as_ref().filter(|k| !k.is_empty()) {
                    config.api_key = Some(key.clone());
                }
                if let Some(secs) = timeout_secs {
                    config.timeout = Duration::from_secs(*secs);
                }
                if let Some(retries) = max_retries {
                    config.max_retries = *retries;
                }
                BackendHandle::new(HttpBackend::new(config).map_err(|e| err(e.to_string()))?)
            }
        })
    }

    /// The effective configuration as stored in a run manifest, with secrets
    /// removed.
    pub fn redacted(&self) -> Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        redact(&mut value);
        value
    }
}

fn redact(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if key == "api_key" {
                    *v = Value::String("<redacted>".into());
                } else {
                    redact(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_substitutes_and_reports_missing() {
        let env = |name: &str| (name == "KEY").then(|| "s3cret".to_owned());
        assert_eq!(interpolate(r#"{"api_key": "${KEY}"}"#, env).unwrap(), r#"{"api_key": "s3cret"}"#);
        assert!(interpolate("${NOPE}", env).is_err());
        assert_eq!(interpolate("$KEY {KEY}", env).unwrap(), "$KEY {KEY}");
    }

    #[test]
    fn roles_fall_back_to_default() {
        let config: RunConfig = serde_json::from_value(serde_json::json!({
            "seed": 1,
            "backends": {
                "default": {"kind": "synthetic", "q_clean": 0.9, "q_adv": 0.5},
                "victim_vlm": {"kind": "synthetic", "q_clean": 0.8, "q_adv": 0.4}
            }
        }))
        .unwrap();
        let b = config.build_backends().unwrap();
        let request = pda_core::model::ChatRequest::llm(pda_core::model::Stage::Paraphrase).user("hi");
        b.paraphraser.complete(&request).unwrap();
        assert_eq!(b.judge.ledger_snapshot().total(), 1);
        assert_eq!(b.victim.ledger_snapshot().total(), 0);
    }

    #[test]
    fn synthetic_requires_a_seed() {
        let config: RunConfig =
            serde_json::from_value(serde_json::json!({"backends": {"default": {"kind": "synthetic", "q_clean": 1.0, "q_adv": 1.0}}}))
                .unwrap();
        assert!(matches!(config.build_backends(), Err(CliError::Config(m)) if m.contains("seed")));
    }

    #[test]
    fn secrets_are_redacted() {
        let config: RunConfig = serde_json::from_value(serde_json::json!({
            "backends": {"default": {"kind": "http", "base_url": "http://x", "model": "m", "api_key": "s3cret"}}
        }))
        .unwrap();
        let text = config.redacted().to_string();
        assert!(!text.contains("s3cret"));
        assert!(text.contains("<redacted>"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_value::<RunConfig>(serde_json::json!({"variants": "pv"})).is_err());
    }
}
