//! Pipeline configuration: one JSON document, `${VAR}` expanded in every
//! string value, relative paths resolved against the config file's folder.

use std::fs;
use std::path::{Path, PathBuf};

use ados_core::features::FeatureSettings;
use ados_core::fusion::{FusionStrategy, MaePair};
use ados_core::items::{ItemMap, ScoreSource};
use ados_core::prompt::{PriorStats, PromptMode};
use ados_core::rules::GridSpec;
use ados_gateway::ModelEndpoint;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Folder with criteria.json / procedures.txt / few_shot.json overrides.
    #[serde(default)]
    pub assets: Option<PathBuf>,
    /// Sentiment lexicon (`term<TAB>weight` lines).
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    /// Canned responses for `--replay`; defaults to `<corpus>/fixtures`.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

/// A grid file path, the word `default`, or an inline grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridRef {
    Inline(GridSpec),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSource {
    pub grid: Option<GridRef>,
    /// Already-fitted parameters; mutually exclusive with `grid`.
    pub params: Option<PathBuf>,
    /// Terms and directions to fit thresholds for; built-in rules if unset.
    pub base: Option<PathBuf>,
}

/// `"default"`, `"corpus"` (label means of the corpus) or an explicit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatsRef {
    Inline(PriorStats),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSettings {
    pub arm: String,
    pub mode: PromptMode,
    pub stats: StatsRef,
}

impl Default for PromptSettings {
    fn default() -> Self {
        PromptSettings {
            arm: "C+M+S".into(),
            mode: PromptMode::ScoreExplainZeroShot,
            stats: StatsRef::Named("default".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    pub strategy: FusionStrategy,
    /// Fixed validation MAEs; estimated from the labeled corpus when unset.
    pub mae: Option<ItemMap<MaePair>>,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            strategy: FusionStrategy::V4SoftmaxNegMae,
            mae: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub sources: Vec<ScoreSource>,
    pub random_baseline: bool,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings {
            sources: vec![ScoreSource::Rule, ScoreSource::Llm, ScoreSource::Fused],
            random_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub features: FeatureSettings,
    /// Merge adjacent same-speaker utterances before feature extraction.
    #[serde(default)]
    pub merge_turns: bool,
    #[serde(default)]
    pub rules: RuleSource,
    #[serde(default)]
    pub prompt: PromptSettings,
    #[serde(default)]
    pub endpoint: Option<ModelEndpoint>,
    #[serde(default)]
    pub fusion: FusionSettings,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    #[serde(default)]
    pub seed: u64,
}

/// A parsed config plus the digest of its raw text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Replaces `${NAME}` with the environment value; `$$` is a literal `$`.
pub fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, CliError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(at) = rest.find('$') {
        out.push_str(&rest[..at]);
        let tail = &rest[at + 1..];
        if let Some(after) = tail.strip_prefix('$') {
            out.push('$');
            rest = after;
        } else if let Some(body) = tail.strip_prefix('{') {
            let end = body
                .find('}')
                .ok_or_else(|| CliError::Config(format!("unterminated `${{` in `{s}`")))?;
            let name = &body[..end];
            if name.is_empty() {
                return Err(CliError::Config(format!("empty variable name in `{s}`")));
            }
            let value = lookup(name)
                .ok_or_else(|| CliError::Config(format!("environment variable `{name}` is not set")))?;
            out.push_str(&value);
            rest = &body[end + 1..];
        } else {
            out.push('$');
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    match v {
        Value::String(s) => *s = interpolate(s, lookup)?,
        Value::Array(xs) => {
            for x in xs {
                interpolate_value(x, lookup)?;
            }
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                interpolate_value(x, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(what: &str, p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", p.display())))
    }
}

impl PipelineConfig {
    pub fn from_text(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut raw: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        interpolate_value(&mut raw, &|k| std::env::var(k).ok())?;
        let mut cfg: PipelineConfig = serde_json::from_value(raw).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.corpus);
        for x in [&mut p.assets, &mut p.lexicon, &mut p.run_dir, &mut p.fixtures].into_iter().flatten() {
            resolve(base, x);
        }
        for x in [&mut self.rules.params, &mut self.rules.base].into_iter().flatten() {
            resolve(base, x);
        }
        if let Some(GridRef::Named(name)) = &mut self.rules.grid {
            if name != "default" && Path::new(name.as_str()).is_relative() {
                *name = base.join(name.as_str()).to_string_lossy().into_owned();
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        must_exist("corpus directory", &self.paths.corpus)?;
        for (what, p) in [
            ("assets directory", &self.paths.assets),
            ("lexicon", &self.paths.lexicon),
            ("fixtures directory", &self.paths.fixtures),
            ("rules.params", &self.rules.params),
            ("rules.base", &self.rules.base),
        ] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        if let Some(GridRef::Named(name)) = &self.rules.grid {
            if name != "default" {
                must_exist("rules.grid", Path::new(name))?;
            }
        }
        if self.rules.grid.is_some() && self.rules.params.is_some() {
            return Err(CliError::Config(
                "rules: set exactly one of `grid` (to fit) or `params` (already fitted)".into(),
            ));
        }
        if let StatsRef::Named(n) = &self.prompt.stats {
            if n != "default" && n != "corpus" {
                return Err(CliError::Config(format!(
                    "prompt.stats must be \"default\", \"corpus\" or an object, got `{n}`"
                )));
            }
        }
        if let Some(ep) = &self.endpoint {
            ep.validate()?;
        }
        if self.evaluate.sources.is_empty() {
            return Err(CliError::Config("evaluate.sources is empty".into()));
        }
        if let Some(s) = self
            .evaluate
            .sources
            .iter()
            .find(|s| !matches!(s, ScoreSource::Rule | ScoreSource::Llm | ScoreSource::Fused))
        {
            return Err(CliError::Config(format!(
                "evaluate.sources: `{s}` is not a pipeline output (use rule, llm or fused)"
            )));
        }
        Ok(())
    }

    /// Where `--replay` looks for canned responses.
    pub fn fixtures_dir(&self) -> PathBuf {
        self.paths
            .fixtures
            .clone()
            .unwrap_or_else(|| self.paths.corpus.join("fixtures"))
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let config = PipelineConfig::from_text(&text, &base)?;
    Ok(LoadedConfig {
        config,
        digest: sha256_hex(text.as_bytes()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(k: &str) -> Option<String> {
        match k {
            "HOME_DIR" => Some("/data".into()),
            "EMPTY" => Some(String::new()),
            _ => None,
        }
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate("${HOME_DIR}/x", &env).unwrap(), "/data/x");
        assert_eq!(interpolate("a$$b", &env).unwrap(), "a$b");
        assert_eq!(interpolate("cost $5", &env).unwrap(), "cost $5");
        assert_eq!(interpolate("[${EMPTY}]", &env).unwrap(), "[]");
        assert!(matches!(interpolate("${NOPE}", &env), Err(CliError::Config(m)) if m.contains("NOPE")));
        assert!(interpolate("${OPEN", &env).is_err());
    }

    #[test]
    fn minimal_config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("corpus")).unwrap();
        let cfg = PipelineConfig::from_text(r#"{"paths": {"corpus": "corpus"}, "rules": {"grid": "default"}}"#, dir.path())
            .unwrap();
        assert_eq!(cfg.paths.corpus, dir.path().join("corpus"));
        assert_eq!(cfg.fusion.strategy, FusionStrategy::V4SoftmaxNegMae);
        assert_eq!(cfg.prompt.arm, "C+M+S");
        assert!(!cfg.merge_turns);
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("c")).unwrap();
        let bad = [
            r#"{"paths": {"corpus": "missing"}}"#,
            r#"{"paths": {"corpus": "c"}, "bogus": 1}"#,
            r#"{"paths": {"corpus": "c"}, "rules": {"grid": "default", "params": "c"}}"#,
            r#"{"paths": {"corpus": "c"}, "prompt": {"stats": "guess"}}"#,
            r#"{"paths": {"corpus": "c"}, "evaluate": {"sources": ["clinician"]}}"#,
            r#"{"paths": {"corpus": "c", "lexicon": "nope.tsv"}}"#,
        ];
        for text in bad {
            assert!(PipelineConfig::from_text(text, dir.path()).is_err(), "{text}");
        }
    }
}
