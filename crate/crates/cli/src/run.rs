//! Run directory layout and the manifest that tracks stage completion.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.json";
pub const FIT_REPORT: &str = "fit_report.json";
pub const SCORES_RULE: &str = "scores_rule.json";
pub const SCORES_LLM: &str = "scores_llm.json";
pub const WEIGHTS: &str = "weights.json";
pub const FUSED: &str = "fused.json";
pub const METRICS: &str = "metrics.json";
pub const METRICS_TABLE: &str = "metrics.txt";
pub const RAW_LLM: &str = "raw_llm";
pub const EXPLANATIONS: &str = "explanations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fit,
    ScoreRule,
    ScoreLlm,
    Fuse,
    Evaluate,
    Explain,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::ScoreRule => "score_rule",
            Stage::ScoreLlm => "score_llm",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
        }
    }

    /// The command that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::ScoreRule => "score --source rule",
            Stage::ScoreLlm => "score --source llm",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
        }
    }

    /// Main artifact, used in error messages.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Fit => PARAMS,
            Stage::ScoreRule => SCORES_RULE,
            Stage::ScoreLlm => SCORES_LLM,
            Stage::Fuse => FUSED,
            Stage::Evaluate => METRICS,
            Stage::Explain => EXPLANATIONS,
        }
    }

    /// Stages whose outputs are computed from this one.
    fn downstream(self) -> &'static [Stage] {
        match self {
            Stage::Fit => &[Stage::ScoreRule, Stage::Fuse, Stage::Evaluate],
            Stage::ScoreRule => &[Stage::Fuse, Stage::Evaluate],
            Stage::ScoreLlm => &[Stage::Fuse, Stage::Evaluate, Stage::Explain],
            Stage::Fuse => &[Stage::Evaluate],
            Stage::Evaluate | Stage::Explain => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageEntry {
    pub complete: bool,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub config_digest: String,
    pub stages: BTreeMap<Stage, StageEntry>,
}

/// `<UTC yyyymmddThhmmssZ>-s<seed>`. `SOURCE_DATE_EPOCH` pins the clock.
pub fn new_run_id(seed: u64) -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    format!("{}-s{seed}", now.format("%Y%m%dT%H%M%SZ"))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
    f.write_all(bytes).map_err(CliError::io(&tmp))?;
    f.sync_all().map_err(CliError::io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(CliError::json(path))
}

#[derive(Debug)]
pub struct RunDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Opens or creates the run. A run made with a different config or
    /// seed is refused unless `force`, which starts its stages over.
    pub fn open(dir: &Path, seed: u64, config_digest: &str, force: bool) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let manifest = if path.exists() {
            let mut m: RunManifest = read_json(&path)?;
            if m.seed != seed || m.config_digest != config_digest {
                if !force {
                    return Err(CliError::RunMismatch {
                        dir: dir.to_path_buf(),
                        reason: format!(
                            "created with seed {} and config {}, now seed {seed} and config {}; \
                             pass --force to start it over or choose another --run-dir",
                            m.seed,
                            short(&m.config_digest),
                            short(config_digest)
                        ),
                    });
                }
                log::warn!("run settings changed; discarding completed stages");
                m.seed = seed;
                m.config_digest = config_digest.to_string();
                m.stages.clear();
            }
            m
        } else {
            RunManifest {
                run_id: new_run_id(seed),
                seed,
                config_digest: config_digest.to_string(),
                stages: BTreeMap::new(),
            }
        };
        let mut run = RunDir {
            dir: dir.to_path_buf(),
            manifest,
        };
        run.drop_stale_flags();
        run.save()?;
        Ok(run)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Clears completion flags whose artifacts have gone missing.
    fn drop_stale_flags(&mut self) {
        let dir = self.dir.clone();
        for (stage, entry) in self.manifest.stages.iter_mut() {
            if entry.complete && !entry.artifacts.iter().all(|a| dir.join(a).exists()) {
                log::warn!("{}: recorded artifacts are missing; stage will rerun", stage.name());
                entry.complete = false;
            }
        }
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.manifest.stages.get(&stage).is_some_and(|e| e.complete)
    }

    pub fn require(&self, stage: Stage) -> Result<(), CliError> {
        if self.is_complete(stage) {
            Ok(())
        } else {
            Err(CliError::MissingStage {
                stage: stage.name(),
                hint: stage.command(),
                artifact: self.path(stage.artifact()),
            })
        }
    }

    pub fn write(&self, rel: &str, contents: &str) -> Result<(), CliError> {
        write_atomic(&self.path(rel), contents.as_bytes())
    }

    /// Records the stage outcome and invalidates everything computed from it.
    pub fn finish(&mut self, stage: Stage, artifacts: Vec<String>, complete: bool) -> Result<(), CliError> {
        for d in stage.downstream() {
            self.manifest.stages.remove(d);
        }
        self.manifest.stages.insert(stage, StageEntry { complete, artifacts });
        self.save()
    }

    /// Adds artifacts to a stage without touching other stages.
    pub fn append(&mut self, stage: Stage, artifacts: impl IntoIterator<Item = String>) -> Result<(), CliError> {
        let entry = self.manifest.stages.entry(stage).or_default();
        for a in artifacts {
            if !entry.artifacts.contains(&a) {
                entry.artifacts.push(a);
            }
        }
        entry.artifacts.sort();
        entry.complete = true;
        self.save()
    }

    fn save(&self) -> Result<(), CliError> {
        self.write(MANIFEST, &to_json(&self.manifest))
    }
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), 3, "abc", false).unwrap();
        run.write(PARAMS, "{}\n").unwrap();
        run.finish(Stage::Fit, vec![PARAMS.into()], true).unwrap();

        let again = RunDir::open(dir.path(), 3, "abc", false).unwrap();
        assert!(again.is_complete(Stage::Fit));
        assert_eq!(again.manifest, run.manifest);

        assert!(matches!(
            RunDir::open(dir.path(), 4, "abc", false),
            Err(CliError::RunMismatch { .. })
        ));
        let forced = RunDir::open(dir.path(), 4, "abc", true).unwrap();
        assert!(!forced.is_complete(Stage::Fit));
    }

    #[test]
    fn missing_artifact_clears_flag() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), 0, "d", false).unwrap();
        run.write(PARAMS, "{}\n").unwrap();
        run.finish(Stage::Fit, vec![PARAMS.into()], true).unwrap();
        fs::remove_file(dir.path().join(PARAMS)).unwrap();
        let run = RunDir::open(dir.path(), 0, "d", false).unwrap();
        assert!(!run.is_complete(Stage::Fit));
        let err = run.require(Stage::Fit).unwrap_err().to_string();
        assert!(err.contains("fit") && err.contains(PARAMS), "{err}");
    }

    #[test]
    fn rerunning_a_stage_invalidates_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), 0, "d", false).unwrap();
        run.finish(Stage::ScoreRule, vec![], true).unwrap();
        run.finish(Stage::Fuse, vec![], true).unwrap();
        run.finish(Stage::ScoreLlm, vec![], true).unwrap();
        assert!(run.is_complete(Stage::ScoreRule));
        assert!(!run.is_complete(Stage::Fuse));
    }

    #[test]
    fn pinned_clock_gives_stable_run_id() {
        // SAFETY: no other test in this binary reads this variable.
        unsafe { std::env::set_var("SOURCE_DATE_EPOCH", "0") };
        assert_eq!(new_run_id(7), "19700101T000000Z-s7");
        unsafe { std::env::remove_var("SOURCE_DATE_EPOCH") };
    }
}
