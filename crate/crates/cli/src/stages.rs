//! One function per command. Each reads its inputs from the config and the
//! run directory, writes its artifacts atomically and updates the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ados_core::assessment::{evaluate_corpus, render_table, Binary, LabeledSession};
use ados_core::corpus::{load_corpus, Corpus};
use ados_core::features::{extract_features, FeatureConfig, FeatureVector};
use ados_core::fusion::{compute_weights, fuse, round_for_totals, FusionStrategy, FusedScoreSheet, MaePair, MaeTable};
use ados_core::items::{ItemId, ItemMap, ItemScores, ScoreSource};
use ados_core::prompt::{
    build_interpretability_prompt, build_scoring_prompt, parse_explanation_response, parse_scoring_response,
    results_to_scores, ExplanationRecord, LlmItemResult, PriorStats, PromptAssets, PromptContext, PromptMode,
};
use ados_core::rules::{default_grid, fit_params, score_all_rule, FitSample, GridSpec, RuleParams};
use ados_core::synth::{generate, GeneratorProfile};
use ados_core::transcript::{normalize, SessionTranscript};
use ados_core::assessment::item_mae;
use ados_core::Execution;
use ados_gateway::{
    request_id, Completion, CompletionBackend, ExchangeStore, GatewayError, HttpGateway, ReplayGateway,
};
use log::{debug, error, info};
use serde::{Deserialize, Serialize};

use crate::config::{GridRef, PipelineConfig, StatsRef};
use crate::error::CliError;
use crate::run::{
    read_json, to_json, write_atomic, RunDir, Stage, EXPLANATIONS, FIT_REPORT, FUSED, METRICS, METRICS_TABLE,
    PARAMS, RAW_LLM, SCORES_LLM, SCORES_RULE, WEIGHTS,
};

/// Everything a pipeline command needs.
#[derive(Debug)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub run: RunDir,
    pub exec: Execution,
    pub force: bool,
    pub replay: bool,
}

/// Scores for one session; justifications only from explaining LLM prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScores {
    pub scores: ItemScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justifications: Option<ItemMap<String>>,
}

/// Contents of `scores_rule.json` / `scores_llm.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresArtifact {
    pub source: ScoreSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_mode: Option<PromptMode>,
    pub sessions: BTreeMap<String, SessionScores>,
    pub failures: BTreeMap<String, String>,
}

impl ScoresArtifact {
    pub fn real(&self) -> BTreeMap<String, ItemMap<f64>> {
        self.sessions
            .iter()
            .map(|(id, s)| (id.clone(), s.scores.map(|_, &v| f64::from(v))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsArtifact {
    pub strategy: FusionStrategy,
    /// Labeled sessions the MAEs were measured on; 0 when given in config.
    pub mae_sessions: usize,
    pub mae: ItemMap<MaePair>,
    pub alpha_llm: ItemMap<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub items: FusedScoreSheet,
    pub rounded: ItemScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedArtifact {
    pub strategy: FusionStrategy,
    pub sessions: BTreeMap<String, FusedEntry>,
}

fn skip_if_done(p: &Pipeline, stage: Stage) -> bool {
    if p.run.is_complete(stage) && !p.force {
        println!("{}: already complete in {} (use --force to recompute)", stage.name(), p.run.dir.display());
        true
    } else {
        false
    }
}

fn feature_config(cfg: &PipelineConfig) -> Result<FeatureConfig, CliError> {
    let lexicon = match &cfg.paths.lexicon {
        Some(p) => Some(fs::read_to_string(p).map_err(CliError::io(p))?),
        None => None,
    };
    Ok(cfg.features.build(lexicon.as_deref())?)
}

fn prompt_assets(cfg: &PipelineConfig) -> Result<PromptAssets, CliError> {
    Ok(match &cfg.paths.assets {
        Some(dir) => PromptAssets::from_dir(dir)?,
        None => PromptAssets::bundled(),
    })
}

fn corpus_stats(labeled: &[LabeledSession], corpus: &Corpus) -> PriorStats {
    let n = labeled.len() as f64;
    let totals: Vec<f64> = labeled.iter().map(|l| f64::from(l.total())).collect();
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let asd = labeled.iter().filter(|l| l.diagnosis().binary() == Binary::Asd).count() as f64 / n;
    PriorStats {
        item_means: corpus.label_means().unwrap_or_default(),
        asd_proportion: asd,
        td_proportion: 1.0 - asd,
        total_mean: Some(mean),
        total_sd: Some(var.sqrt()),
    }
}

fn prompt_context(cfg: &PipelineConfig, assets: &PromptAssets, corpus: &Corpus) -> Result<PromptContext, CliError> {
    let mut ctx = PromptContext::for_arm(&cfg.prompt.arm, cfg.prompt.mode, assets)?;
    ctx.stats = match &cfg.prompt.stats {
        StatsRef::Inline(s) => s.clone(),
        StatsRef::Named(n) if n == "corpus" => {
            let labeled = corpus.labeled_sessions()?;
            corpus_stats(&labeled, corpus)
        }
        StatsRef::Named(_) => PriorStats::default(),
    };
    ctx.validate()?;
    Ok(ctx)
}

fn normalized(cfg: &PipelineConfig, t: &SessionTranscript) -> Result<SessionTranscript, CliError> {
    Ok(normalize(t, cfg.merge_turns)?)
}

fn base_params(cfg: &PipelineConfig) -> Result<RuleParams, CliError> {
    match &cfg.rules.base {
        Some(p) => read_json(p),
        None => Ok(RuleParams::default()),
    }
}

fn resolve_grid(g: &GridRef, base: &RuleParams) -> Result<GridSpec, CliError> {
    match g {
        GridRef::Inline(spec) => Ok(spec.clone()),
        GridRef::Named(n) if n == "default" => Ok(default_grid(base)),
        GridRef::Named(path) => read_json(Path::new(path)),
    }
}

/// Splits per-task outcomes, logging each failure.
fn partition<T>(stage: &str, results: Vec<(String, Result<T, CliError>)>) -> (BTreeMap<String, T>, BTreeMap<String, String>) {
    let mut ok = BTreeMap::new();
    let mut failed = BTreeMap::new();
    for (id, r) in results {
        match r {
            Ok(v) => {
                ok.insert(id, v);
            }
            Err(e) => {
                error!("{stage}: {id}: {e}");
                failed.insert(id, e.to_string());
            }
        }
    }
    (ok, failed)
}

pub fn fit(p: &mut Pipeline) -> Result<(), CliError> {
    if skip_if_done(p, Stage::Fit) {
        return Ok(());
    }
    let base = base_params(&p.cfg)?;
    let grid = match (&p.cfg.rules.grid, &p.cfg.rules.params) {
        (Some(g), _) => resolve_grid(g, &base)?,
        (None, Some(path)) => {
            return Err(CliError::Config(format!(
                "rules.params is set ({}); fitting needs rules.grid instead",
                path.display()
            )))
        }
        (None, None) => return Err(CliError::Config("rules.grid is not set".into())),
    };
    let corpus = load_corpus(&p.cfg.paths.corpus)?;
    let labeled = corpus.labeled_sessions()?;
    let features = feature_config(&p.cfg)?;
    let cfg = &p.cfg;
    let vectors = p.exec.map(&corpus.sessions, |t| -> Result<FeatureVector, CliError> {
        Ok(extract_features(&normalized(cfg, t)?, &features)?)
    });
    let mut samples = Vec::with_capacity(labeled.len());
    for (l, f) in labeled.into_iter().zip(vectors) {
        samples.push(FitSample {
            class: l.diagnosis().ternary(),
            features: f?,
            truth: l.truth,
            session_id: l.session_id,
        });
    }
    let seed = p.run.manifest.seed;
    let (params, report) = fit_params(&samples, &base, &grid, seed, p.exec)?;
    p.run.write(PARAMS, &to_json(&params))?;
    p.run.write(FIT_REPORT, &to_json(&report))?;
    p.run.finish(Stage::Fit, vec![PARAMS.into(), FIT_REPORT.into()], true)?;

    println!("fit: {} sessions, seed {seed}", samples.len());
    for (item, fit) in report.items.iter() {
        let best = fit.best();
        println!(
            "  {item:<4} t1 {:>7.4}  t2 {:>7.4}  cv MAE {:.4}  ({} candidates)",
            best.t1,
            best.t2,
            best.mean_mae,
            fit.candidates.len()
        );
    }
    Ok(())
}

fn rule_params(p: &Pipeline) -> Result<RuleParams, CliError> {
    match &p.cfg.rules.params {
        Some(path) => read_json(path),
        None => {
            if p.cfg.rules.grid.is_none() {
                return Err(CliError::Config(
                    "rule scoring needs rules.params or rules.grid (then `ados fit`)".into(),
                ));
            }
            p.run.require(Stage::Fit)?;
            read_json(&p.run.path(PARAMS))
        }
    }
}

fn finish_scores(p: &mut Pipeline, stage: Stage, rel: &str, artifact: ScoresArtifact) -> Result<(), CliError> {
    let failed = artifact.failures.len();
    let total = failed + artifact.sessions.len();
    p.run.write(rel, &to_json(&artifact))?;
    p.run.finish(stage, vec![rel.into()], failed == 0)?;
    println!("{}: {} of {total} sessions scored -> {}", stage.name(), artifact.sessions.len(), p.run.path(rel).display());
    if failed > 0 {
        return Err(CliError::TaskFailures {
            stage: stage.name(),
            failed,
            total,
        });
    }
    Ok(())
}

pub fn score_rule(p: &mut Pipeline) -> Result<(), CliError> {
    if skip_if_done(p, Stage::ScoreRule) {
        return Ok(());
    }
    let params = rule_params(p)?;
    let corpus = load_corpus(&p.cfg.paths.corpus)?;
    let features = feature_config(&p.cfg)?;
    let cfg = &p.cfg;
    let results = p.exec.map(&corpus.sessions, |t| {
        let scored = normalized(cfg, t).and_then(|n| {
            let f = extract_features(&n, &features)?;
            Ok(SessionScores {
                scores: score_all_rule(&f, &params)?.scores,
                justifications: None,
            })
        });
        (t.session_id().to_string(), scored)
    });
    let (sessions, failures) = partition("score_rule", results);
    let artifact = ScoresArtifact {
        source: ScoreSource::Rule,
        prompt_mode: None,
        sessions,
        failures,
    };
    finish_scores(p, Stage::ScoreRule, SCORES_RULE, artifact)
}

/// Stored exchanges first, then the live endpoint.
struct Resume {
    cache: ReplayGateway,
    live: HttpGateway,
}

impl CompletionBackend for Resume {
    fn complete(&self, id: &str, bundle: &ados_core::prompt::PromptBundle) -> Result<Completion, GatewayError> {
        match self.cache.complete(id, bundle) {
            Ok(c) => {
                debug!("{id}: reusing stored exchange");
                Ok(c)
            }
            Err(_) => self.live.complete(id, bundle),
        }
    }
}

fn backend(p: &Pipeline) -> Result<Box<dyn CompletionBackend>, CliError> {
    let store = ExchangeStore::new(p.run.path(RAW_LLM));
    if p.replay {
        let fixtures = p.cfg.fixtures_dir();
        let fixtures = fixtures.is_dir().then_some(fixtures);
        return Ok(Box::new(ReplayGateway::new(Some(store), fixtures)));
    }
    let endpoint = p
        .cfg
        .endpoint
        .clone()
        .ok_or_else(|| CliError::Config("no `endpoint` configured; add one or pass --replay".into()))?;
    let live = HttpGateway::new(endpoint)?.with_store(store.clone());
    Ok(Box::new(Resume {
        cache: ReplayGateway::new(Some(store), None),
        live,
    }))
}

pub fn score_llm(p: &mut Pipeline) -> Result<(), CliError> {
    if skip_if_done(p, Stage::ScoreLlm) {
        return Ok(());
    }
    let backend = backend(p)?;
    let corpus = load_corpus(&p.cfg.paths.corpus)?;
    let assets = prompt_assets(&p.cfg)?;
    let ctx = prompt_context(&p.cfg, &assets, &corpus)?;
    let cfg = &p.cfg;
    let results = p.exec.map(&corpus.sessions, |t| {
        let id = t.session_id().to_string();
        let scored = (|| -> Result<SessionScores, CliError> {
            let n = normalized(cfg, t)?;
            let bundle = build_scoring_prompt(&n, &ctx, &assets)?;
            let reply = backend.complete(&request_id(&id, ctx.mode.as_str()), &bundle)?;
            let parsed = parse_scoring_response(&reply.text, ctx.mode)?;
            let scores = results_to_scores(&parsed)?;
            let justifications = ctx.mode.wants_justification().then(|| {
                let mut j = ItemMap::from_fn(|_| String::new());
                for r in &parsed {
                    j[r.item] = r.justification.clone();
                }
                j
            });
            Ok(SessionScores { scores, justifications })
        })();
        (id, scored)
    });
    let (sessions, failures) = partition("score_llm", results);
    let artifact = ScoresArtifact {
        source: ScoreSource::Llm,
        prompt_mode: Some(ctx.mode),
        sessions,
        failures,
    };
    finish_scores(p, Stage::ScoreLlm, SCORES_LLM, artifact)
}

fn read_scores(p: &Pipeline, stage: Stage) -> Result<ScoresArtifact, CliError> {
    p.run.require(stage)?;
    read_json(&p.run.path(stage.artifact()))
}

pub fn fuse_stage(p: &mut Pipeline) -> Result<(), CliError> {
    if skip_if_done(p, Stage::Fuse) {
        return Ok(());
    }
    let rule = read_scores(p, Stage::ScoreRule)?;
    let llm = read_scores(p, Stage::ScoreLlm)?;
    let (rule, llm) = (rule.real(), llm.real());
    let shared: Vec<&String> = rule.keys().filter(|k| llm.contains_key(*k)).collect();

    let (mae, mae_sessions) = match &p.cfg.fusion.mae {
        Some(m) => (MaeTable::new(*m)?, 0),
        None => {
            let corpus = load_corpus(&p.cfg.paths.corpus)?;
            let labeled: Vec<LabeledSession> = corpus
                .labeled_sessions()?
                .into_iter()
                .filter(|l| rule.contains_key(&l.session_id) && llm.contains_key(&l.session_id))
                .collect();
            if labeled.is_empty() {
                return Err(CliError::Config(
                    "fusion needs labeled sessions scored by both sources, or fusion.mae".into(),
                ));
            }
            let pairs = ItemMap::try_from_fn(|id: ItemId| -> Result<MaePair, CliError> {
                let truth: Vec<f64> = labeled.iter().map(|l| f64::from(l.truth[id])).collect();
                let of = |m: &BTreeMap<String, ItemMap<f64>>| -> Vec<f64> {
                    labeled.iter().map(|l| m[&l.session_id][id]).collect()
                };
                Ok(MaePair {
                    llm: item_mae(&of(&llm), &truth)?,
                    rule: item_mae(&of(&rule), &truth)?,
                })
            })?;
            (MaeTable::new(pairs)?, labeled.len())
        }
    };
    let strategy = p.cfg.fusion.strategy;
    let weights = compute_weights(&mae, strategy)?;
    let sessions: BTreeMap<String, FusedEntry> = shared
        .into_iter()
        .map(|id| {
            let items = fuse(&llm[id], &rule[id], &weights);
            let rounded = round_for_totals(&items);
            (id.clone(), FusedEntry { items, rounded })
        })
        .collect();
    let weights_artifact = WeightsArtifact {
        strategy,
        mae_sessions,
        mae: mae.clone().into(),
        alpha_llm: weights.alpha_llm,
    };
    p.run.write(WEIGHTS, &to_json(&weights_artifact))?;
    p.run.write(
        FUSED,
        &to_json(&FusedArtifact {
            strategy,
            sessions,
        }),
    )?;
    p.run.finish(Stage::Fuse, vec![WEIGHTS.into(), FUSED.into()], true)?;
    println!("fuse: {strategy}");
    for (item, a) in weights.alpha_llm.iter() {
        let m = mae.get(item);
        println!("  {item:<4} MAE llm {:.4} rule {:.4}  alpha_llm {a:.4}", m.llm, m.rule);
    }
    Ok(())
}

pub fn evaluate(p: &mut Pipeline) -> Result<(), CliError> {
    if skip_if_done(p, Stage::Evaluate) {
        return Ok(());
    }
    let mut preds: BTreeMap<ScoreSource, BTreeMap<String, ItemMap<f64>>> = BTreeMap::new();
    for &source in &p.cfg.evaluate.sources {
        let scores = match source {
            ScoreSource::Rule => read_scores(p, Stage::ScoreRule)?.real(),
            ScoreSource::Llm => read_scores(p, Stage::ScoreLlm)?.real(),
            _ => {
                p.run.require(Stage::Fuse)?;
                let fused: FusedArtifact = read_json(&p.run.path(FUSED))?;
                fused.sessions.into_iter().map(|(id, e)| (id, e.items.scores())).collect()
            }
        };
        preds.insert(source, scores);
    }
    let corpus = load_corpus(&p.cfg.paths.corpus)?;
    let labeled = corpus.labeled_sessions()?;
    let seed = p.run.manifest.seed;
    let reports = evaluate_corpus(&preds, &labeled, p.cfg.evaluate.random_baseline.then_some(seed), p.exec)?;
    let table = render_table(reports.iter().map(|(s, r)| (s.as_str(), r)));
    p.run.write(METRICS, &to_json(&reports))?;
    p.run.write(METRICS_TABLE, &table)?;
    p.run.finish(Stage::Evaluate, vec![METRICS.into(), METRICS_TABLE.into()], true)?;
    print!("{table}");
    Ok(())
}

fn explanation_file(session: &str, item: ItemId) -> String {
    format!("{EXPLANATIONS}/{session}__{item}.json")
}

pub fn explain(p: &mut Pipeline, sessions: &[String], items: &[ItemId]) -> Result<(), CliError> {
    let scores_path = p.run.path(SCORES_LLM);
    if !scores_path.exists() {
        return Err(CliError::MissingStage {
            stage: Stage::ScoreLlm.name(),
            hint: Stage::ScoreLlm.command(),
            artifact: scores_path,
        });
    }
    let first: ScoresArtifact = read_json(&scores_path)?;
    let corpus = load_corpus(&p.cfg.paths.corpus)?;
    let ids: Vec<String> = if sessions.is_empty() {
        first.sessions.keys().cloned().collect()
    } else {
        sessions.to_vec()
    };
    let items: Vec<ItemId> = if items.is_empty() { ItemId::ALL.to_vec() } else { items.to_vec() };

    let done_before = p.run.is_complete(Stage::Explain);
    let mut tasks: Vec<(String, ItemId)> = Vec::new();
    for id in &ids {
        if corpus.session(id).is_none() {
            return Err(CliError::Config(format!("unknown session `{id}`")));
        }
        for &item in &items {
            let rel = explanation_file(id, item);
            let listed = p.run.manifest.stages.get(&Stage::Explain).is_some_and(|e| e.artifacts.contains(&rel));
            if done_before && listed && !p.force {
                println!("explain: {id} {item} already done");
                continue;
            }
            tasks.push((id.clone(), item));
        }
    }
    if tasks.is_empty() {
        return Ok(());
    }

    let backend = backend(p)?;
    let assets = prompt_assets(&p.cfg)?;
    let cfg = &p.cfg;
    let dir = p.run.dir.clone();
    let results = p.exec.map(&tasks, |(id, item)| {
        let item = *item;
        let out = (|| -> Result<ExplanationRecord, CliError> {
            let entry = first.sessions.get(id).ok_or_else(|| {
                CliError::Config(format!("session `{id}` has no first-stage LLM score in {SCORES_LLM}"))
            })?;
            let t = normalized(cfg, corpus.session(id).expect("checked above"))?;
            let first_stage = LlmItemResult {
                item,
                score: entry.scores[item],
                justification: entry.justifications.as_ref().map(|j| j[item].clone()).unwrap_or_default(),
            };
            let bundle = build_interpretability_prompt(item, &first_stage, &t, &assets)?;
            let reply = backend.complete(&request_id(id, &format!("explain_{item}")), &bundle)?;
            let record = parse_explanation_response(&reply.text, item, first_stage.score, &t)?;
            write_atomic(&dir.join(explanation_file(id, item)), to_json(&record).as_bytes())?;
            Ok(record)
        })();
        (format!("{id} {item}"), out)
    });
    let total = results.len();
    let mut written = Vec::new();
    let mut failed = 0;
    for ((id, item), (label, r)) in tasks.iter().zip(results) {
        match r {
            Ok(rec) => {
                let verified = rec.excerpts.iter().filter(|e| e.verified).count();
                println!(
                    "explain: {label}: score {} -> {}{}, {verified}/{} excerpts verified",
                    rec.first_stage_score,
                    rec.confirmed_score,
                    if rec.consistent { "" } else { " (revised)" },
                    rec.excerpts.len()
                );
                written.push(explanation_file(id, *item));
            }
            Err(e) => {
                error!("explain: {label}: {e}");
                failed += 1;
            }
        }
    }
    p.run.append(Stage::Explain, written)?;
    if failed > 0 {
        return Err(CliError::TaskFailures {
            stage: "explain",
            failed,
            total,
        });
    }
    Ok(())
}

/// Writes a synthetic corpus. Not tied to a run directory.
pub fn synth(out: &Path, profile: Option<&Path>, seed: Option<u64>, force: bool) -> Result<PathBuf, CliError> {
    let marker = out.join("synth_meta.json");
    if marker.exists() && !force {
        println!("synth: corpus already present in {} (use --force to regenerate)", out.display());
        return Ok(out.to_path_buf());
    }
    let mut profile: GeneratorProfile = match profile {
        Some(path) => read_json(path)?,
        None => GeneratorProfile::default(),
    };
    if let Some(s) = seed {
        profile.seed = s;
    }
    let corpus = generate(&profile)?;
    corpus.write_to(out).map_err(CliError::io(out))?;
    info!("synth: profile seed {}", profile.seed);
    println!(
        "synth: {} sessions (mix {:?}) -> {}",
        corpus.sessions.len(),
        profile.class_mix,
        out.display()
    );
    Ok(out.to_path_buf())
}
