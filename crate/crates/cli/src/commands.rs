use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use survey_sim::baselines::{BaselineSpec, Embedder, HttpEmbedder};
use survey_sim::cohorts::{
    augment_oracle_personality, fit_clusters, sample_representatives, AugmentConfig, ClusterOptions, KMeansConfig,
};
use survey_sim::experiment::{
    fixed_stack, human_responses, predicted_responses, run_subjects, ExperimentConfig, Method,
};
use survey_sim::gateway::{ChatBackend, Gateway, HttpBackend, MockBackend, MockScript, RequestLog};
use survey_sim::metrics::{evaluate as score, EvalOptions, Setting};
use survey_sim::pipeline::{PipelineConfig, TraceRecord};
use survey_sim::survey::{load_questions, read_jsonl, validate_respondents, write_jsonl, Respondent, SurveyQuestion};
use survey_sim::templates::PromptTemplates;
use survey_sim::{ClusterModel, EvalReport};

use crate::config::RunConfig;
use crate::store::{self, write_pretty, RunStore};

pub const CLUSTER_MODEL: &str = "cluster_model.json";
pub const SAMPLED: &str = "sampled.jsonl";
pub const CLUSTERED: &str = "clustered.jsonl";
pub const AUGMENTED: &str = "augmented.jsonl";
pub const ORACLE: &str = "oracle.jsonl";

fn load_respondents(path: &Path, questions: Option<&[SurveyQuestion]>) -> Result<Vec<Respondent>> {
    let respondents: Vec<Respondent> = read_jsonl(path)?;
    if let Some(qs) = questions {
        validate_respondents(&respondents, qs)?;
    }
    Ok(respondents)
}

fn templates(config: &RunConfig) -> Result<PromptTemplates> {
    match &config.paths.templates_dir {
        Some(dir) => Ok(PromptTemplates::load(dir, &config.locale)?),
        None if config.locale == "en" => Ok(PromptTemplates::english()),
        None => bail!("locale {:?} needs --templates-dir", config.locale),
    }
}

fn backend(config: &RunConfig) -> Result<Arc<dyn ChatBackend>> {
    let b = &config.backend;
    Ok(match &b.mock_script {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let script: MockScript =
                serde_json::from_str(&text).with_context(|| format!("parsing mock script {}", path.display()))?;
            Arc::new(MockBackend::from_script(script))
        }
        None => Arc::new(HttpBackend::from_env(
            &b.base_url,
            &b.api_key_env,
            Duration::from_secs(b.timeout_secs),
        )),
    })
}

fn gateway(config: &RunConfig, log: &Path) -> Result<Gateway> {
    let log = RequestLog::open(log).with_context(|| format!("opening {}", log.display()))?;
    Ok(Gateway::with_log(backend(config)?, config.backend.generation(), Some(Arc::new(log))))
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = RunConfig::require(&config.paths.output_dir, "output directory (--out)")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

/// Input paths made absolute so a stored configuration stays usable from
/// any working directory.
fn absolutize(config: &mut RunConfig) -> Result<()> {
    let p = &mut config.paths;
    for path in [
        &mut p.respondents,
        &mut p.questions,
        &mut p.population,
        &mut p.templates_dir,
        &mut p.output_dir,
        &mut config.backend.mock_script,
    ]
    .into_iter()
    .flatten()
    {
        *path = std::path::absolute(&*path).with_context(|| format!("resolving {}", path.display()))?;
    }
    Ok(())
}

pub fn cluster(config: &RunConfig) -> Result<()> {
    let respondents_path = RunConfig::require(&config.paths.respondents, "respondents")?;
    let questions = match &config.paths.questions {
        Some(p) => Some(load_questions(p)?),
        None => None,
    };
    let respondents = load_respondents(respondents_path, questions.as_deref())?;
    let c = &config.clustering;
    let options = ClusterOptions {
        k_range: c.k_min..=c.k_max,
        fixed_k: c.k,
        seed: config.seed,
        kmeans: KMeansConfig::default(),
    };
    let model: ClusterModel = fit_clusters(&respondents, &options)?;
    let sampled = sample_representatives(&model, &respondents, c.sampling, config.seed);
    let clustered: Vec<Respondent> = respondents
        .iter()
        .map(|r| Respondent {
            cluster: model.assignments.get(&r.id).copied(),
            ..r.clone()
        })
        .collect();
    let dir = output_dir(config)?;
    write_pretty(&dir.join(CLUSTER_MODEL), &model)?;
    write_jsonl(&dir.join(CLUSTERED), &clustered)?;
    write_jsonl(&dir.join(SAMPLED), &sampled)?;
    println!(
        "k = {} over {} respondents; {} representatives written to {}",
        model.k,
        respondents.len(),
        sampled.len(),
        dir.join(SAMPLED).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct OracleLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    assignment: &'a survey_sim::cohorts::OracleAssignment,
}

pub fn augment(config: &RunConfig) -> Result<()> {
    let questions = load_questions(RunConfig::require(&config.paths.questions, "questions")?)?;
    let mut respondents =
        load_respondents(RunConfig::require(&config.paths.respondents, "respondents")?, Some(&questions))?;
    let dir = output_dir(config)?;
    let gw = gateway(config, &dir.join(store::REQUESTS))?;
    let augment_config = AugmentConfig {
        templates: templates(config)?,
    };
    let mut details = Vec::new();
    let (mut assigned, mut kept, mut failed) = (0, 0, 0);
    for r in &mut respondents {
        if r.oracle_personality.is_some() {
            kept += 1;
            continue;
        }
        match augment_oracle_personality(r, &questions, &gw, &augment_config) {
            Ok(a) => {
                r.oracle_personality = Some(a.type_code);
                details.push(serde_json::to_value(OracleLine {
                    id: &r.id,
                    assignment: &a,
                })?);
                assigned += 1;
            }
            Err(e) => {
                tracing::warn!(respondent = %r.id, "augmentation failed, left unchanged: {e}");
                failed += 1;
            }
        }
    }
    write_jsonl(&dir.join(AUGMENTED), &respondents)?;
    if !details.is_empty() {
        let mut out = store::RunStore { dir: dir.clone() }.appender(ORACLE)?;
        out.append(&details)?;
    }
    println!("{assigned} assigned, {kept} already augmented, {failed} failed");
    Ok(())
}

#[derive(Default, Serialize)]
struct WarningSummary {
    subjects_processed: usize,
    pairs_skipped_as_done: usize,
    pairs_failed: usize,
    stage_warnings: BTreeMap<String, usize>,
    messages: Vec<String>,
}

const MAX_MESSAGES: usize = 200;

impl WarningSummary {
    fn note(&mut self, msg: String) {
        if self.messages.len() < MAX_MESSAGES {
            self.messages.push(msg);
        }
    }

    fn absorb(&mut self, trace: &[TraceRecord]) {
        for t in trace {
            if !t.warnings.is_empty() {
                *self.stage_warnings.entry(t.stage.clone()).or_default() += t.warnings.len();
                for w in &t.warnings {
                    let q = t.question_id.as_deref().unwrap_or("-");
                    self.note(format!("{}/{q} {}: {w}", t.subject_id, t.stage));
                }
            }
        }
    }
}

pub fn simulate(config: &RunConfig) -> Result<()> {
    let mut config = config.clone();
    absolutize(&mut config)?;
    let questions = load_questions(RunConfig::require(&config.paths.questions, "questions")?)?;
    let subjects = load_respondents(RunConfig::require(&config.paths.respondents, "respondents")?, Some(&questions))?;
    let templates = templates(&config)?;
    if matches!(config.method, Method::Mark | Method::Ablation { .. }) {
        for s in &subjects {
            fixed_stack(config.personality_strategy, s, config.seed)?;
        }
    }
    let dir = output_dir(&config)?;
    let store = RunStore::open(&dir, &config, &templates)?;
    let done: BTreeSet<(String, String)> = RunStore::responses(&dir)?
        .into_iter()
        .filter(|r| r.answer.is_some())
        .map(|r| (r.subject_id, r.question_id))
        .collect();
    let gw = gateway(&config, &dir.join(store::REQUESTS))?;
    let http_embedder;
    let embedder: Option<&dyn Embedder> = match (&config.method, &config.backend.embedding_model) {
        (Method::Baseline { spec: BaselineSpec::DemoIdeoOpinion { .. } }, Some(model))
            if config.backend.mock_script.is_none() =>
        {
            let b = &config.backend;
            http_embedder = HttpEmbedder::new(
                &b.base_url,
                model,
                std::env::var(&b.api_key_env).ok(),
                Duration::from_secs(b.timeout_secs),
            );
            Some(&http_embedder)
        }
        _ => None,
    };
    let experiment = ExperimentConfig {
        method: config.method.clone(),
        personality: config.personality_strategy,
        pipeline: PipelineConfig {
            templates,
            negative_threshold: config.negative_threshold,
            ..PipelineConfig::default()
        },
        seed: config.seed,
        embedder,
    };

    let mut responses_out = store.appender(store::RESPONSES)?;
    let mut trace_out = store.appender(store::TRACE)?;
    let mut summary = WarningSummary::default();
    let mut write_error = None;
    for subject in &subjects {
        let missing: Vec<SurveyQuestion> = questions
            .iter()
            .filter(|q| !done.contains(&(subject.id.clone(), q.id.clone())))
            .cloned()
            .collect();
        summary.pairs_skipped_as_done += questions.len() - missing.len();
        if missing.is_empty() {
            continue;
        }
        run_subjects(std::slice::from_ref(subject), &missing, &questions, &gw, &experiment, |out| {
            summary.subjects_processed += 1;
            summary.absorb(&out.trace);
            for r in out.responses.iter().filter(|r| r.answer.is_none()) {
                summary.pairs_failed += 1;
                let err = r.error.as_deref().unwrap_or("no answer");
                summary.note(format!("{}/{} failed: {err}", r.subject_id, r.question_id));
            }
            let written = responses_out.append(&out.responses).and_then(|_| trace_out.append(&out.trace));
            if let Err(e) = written {
                write_error.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_error.take() {
            return Err(e);
        }
    }
    write_pretty(&dir.join(store::WARNINGS), &summary)?;
    println!(
        "{}: {} subjects simulated, {} pairs already done, {} pairs failed",
        dir.display(),
        summary.subjects_processed,
        summary.pairs_skipped_as_done,
        summary.pairs_failed
    );
    Ok(())
}

fn setting_name(setting: Setting) -> &'static str {
    match setting {
        Setting::Sampled => "sampled",
        Setting::Global => "global",
    }
}

/// Scores a run without writing anything.
pub fn compute_eval(run: &Path, setting: Setting, exclude_non_substantive: bool) -> Result<EvalReport> {
    let config = RunStore::load_config(run)?;
    let questions = load_questions(RunConfig::require(&config.paths.questions, "questions")?)?;
    let responses = RunStore::responses(run)?;
    if responses.is_empty() {
        bail!("{} holds no responses; run `simulate` first", run.display());
    }
    if responses.iter().all(|r| r.cluster.is_none()) {
        bail!(
            "no simulated subject carries a cluster tag; simulate the {SAMPLED} written by `cluster`"
        );
    }
    let (preds, mut warnings) = predicted_responses(&responses);
    let human_path = match (setting, &config.paths.population) {
        (Setting::Global, Some(p)) => p.clone(),
        (Setting::Global, None) => {
            warnings.push("no population file configured; the global setting pools the simulated subjects' own answers".into());
            RunConfig::require(&config.paths.respondents, "respondents")?.to_path_buf()
        }
        (Setting::Sampled, _) => RunConfig::require(&config.paths.respondents, "respondents")?.to_path_buf(),
    };
    let humans = load_respondents(&human_path, Some(&questions))?;
    let (human_labels, human_warnings) = human_responses(&humans, &questions);
    warnings.extend(human_warnings);
    let options = EvalOptions {
        exclude_non_substantive,
    };
    let mut report: EvalReport = score(&questions, &preds, &human_labels, setting, options);
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    for w in &report.warnings {
        tracing::warn!("{}: {w}", run.display());
    }
    Ok(report)
}

pub fn evaluate(run: &Path, setting: Setting, exclude_non_substantive: bool) -> Result<EvalReport> {
    let report = compute_eval(run, setting, exclude_non_substantive)?;
    let name = setting_name(setting);
    let csv = report.to_csv();
    std::fs::write(run.join(format!("eval_{name}.csv")), &csv)?;
    write_pretty(&run.join(format!("eval_{name}.json")), &report)?;
    print!("{csv}");
    Ok(report)
}

const METRICS: [&str; 4] = ["ACC", "1-JSD", "EMD", "kappa"];

fn metric(row: &survey_sim::EvalRow, name: &str) -> Option<f64> {
    match name {
        "ACC" => row.acc,
        "1-JSD" => row.one_minus_jsd,
        "EMD" => row.emd,
        _ => row.kappa,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Unique column labels from run directory names.
fn run_labels(runs: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    runs.iter()
        .map(|r| {
            let base = r
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| r.display().to_string());
            let n = seen.entry(base.clone()).or_default();
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}#{n}")
            }
        })
        .collect()
}

pub fn report(runs: &[PathBuf], setting: Setting, exclude_non_substantive: bool, out: &Path) -> Result<()> {
    let reports = runs
        .iter()
        .map(|r| compute_eval(r, setting, exclude_non_substantive))
        .collect::<Result<Vec<_>>>()?;
    let labels = run_labels(runs);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    // cluster rows in numeric order, then the average
    let mut clusters: Vec<String> = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.cluster.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    clusters.sort_by_key(|c| c.parse::<usize>().unwrap_or(usize::MAX));
    clusters.push("Avg.".into());

    let mut warnings = Vec::new();
    let mut table = csv::Writer::from_path(out.join("comparison.csv"))?;
    let mut header = vec!["row".to_string(), "metric".to_string()];
    header.extend(labels.iter().cloned());
    table.write_record(&header)?;
    for c in &clusters {
        for m in METRICS {
            let mut record = vec![c.clone(), m.to_string()];
            for (label, report) in labels.iter().zip(&reports) {
                let row = if c == "Avg." {
                    Some(&report.average)
                } else {
                    report.rows.iter().find(|r| &r.cluster == c)
                };
                let value = row.and_then(|r| metric(r, m));
                if value.is_none() && !(m == "ACC" && setting == Setting::Global) {
                    warnings.push(format!("{label}: no {m} for row {c}"));
                }
                record.push(cell(value));
            }
            table.write_record(&record)?;
        }
    }
    table.flush()?;

    let mut plot = csv::Writer::from_path(out.join(format!("plot_{}.csv", setting_name(setting))))?;
    plot.write_record(["cluster", "run", "ACC", "1-JSD"])?;
    for (label, report) in labels.iter().zip(&reports) {
        for row in &report.rows {
            plot.write_record([
                row.cluster.clone(),
                label.clone(),
                cell(row.acc),
                cell(row.one_minus_jsd),
            ])?;
        }
    }
    plot.flush()?;

    for w in &warnings {
        tracing::warn!("{w}");
    }
    write_pretty(&out.join("report_warnings.json"), &warnings)?;
    println!("compared {} runs into {}", runs.len(), out.display());
    Ok(())
}
