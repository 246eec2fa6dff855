use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use comcts_core::dataset::{DatasetError, RecordWriter, UNTAGGED};
use comcts_core::reflection::{sample_reflection_subset, ReflectError, SampleSize, DEFAULT_REFLECTION_RATIO};
use comcts_core::sim::{run_bench_spec, BenchError};
use comcts_core::{
    build_ensemble, flatten_for_sft, load_questions, read_records, step_stats, write_records,
    BackendContext, BackendError, Engine, Ensemble, PathKind, PromptSet, SearchConfig,
    SearchError, SearchRecord, StepStats, TaskBook,
};
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{load_bench_spec, validate_ratio, ConfigError, RunConfig};
use crate::{AnalyzeArgs, BenchArgs, BuildDatasetArgs, ExitStatus, Format, Globals, SearchArgs};

pub const SEARCH_METHOD: &str = "comcts";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("backend setup failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Reflect(#[from] ReflectError),
    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

impl CommandError {
    pub fn status(&self) -> ExitStatus {
        match self {
            CommandError::Config(e) if e.is_io() => ExitStatus::Io,
            CommandError::Config(_)
            | CommandError::Usage(_)
            | CommandError::Backend(_)
            | CommandError::Search(_) => ExitStatus::Usage,
            CommandError::Bench(BenchError::World(_) | BenchError::Backend(_) | BenchError::Search(_)) => {
                ExitStatus::Usage
            }
            CommandError::Dataset(DatasetError::Io { .. } | DatasetError::DuplicateId { .. })
            | CommandError::Output { .. } => ExitStatus::Io,
            _ => ExitStatus::Failure,
        }
    }
}

fn output_err(path: &Path) -> impl FnOnce(io::Error) -> CommandError + '_ {
    move |source| CommandError::Output { path: path.to_path_buf(), source }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(args: std::fmt::Arguments<'_>) {
    let _ = io::stdout().lock().write_fmt(args);
}

fn emitln(args: std::fmt::Arguments<'_>) {
    let mut out = io::stdout().lock();
    let _ = out.write_fmt(args).and_then(|_| out.write_all(b"\n"));
}

fn print_json(value: &serde_json::Value) {
    emitln(format_args!("{}", serde_json::to_string_pretty(value).expect("json values always serialize")));
}

fn stats_rows(stats: &[StepStats]) -> String {
    let mut out = String::new();
    for s in stats {
        let key = s.group_key.as_deref().unwrap_or("all");
        let hist: Vec<String> = s.histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        out.push_str(&format!(
            "  {key:<12} paths {:>6}  mean steps {:>6.2}  histogram {}\n",
            s.count,
            s.mean,
            hist.join(" ")
        ));
    }
    out
}

/// Overall and per-topic statistics from (topic, path length) pairs.
fn path_stats(lengths: &[(Option<String>, usize)]) -> Vec<StepStats> {
    let mut stats: Vec<StepStats> =
        StepStats::from_lengths(None, lengths.iter().map(|(_, l)| *l)).into_iter().collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (topic, len) in lengths {
        let key = topic.clone().unwrap_or_else(|| UNTAGGED.to_string());
        groups.entry(key).or_default().push(*len);
    }
    if groups.len() > 1 || groups.keys().any(|k| k != UNTAGGED) {
        stats.extend(groups.into_iter().filter_map(|(k, v)| StepStats::from_lengths(Some(k), v)));
    }
    stats
}

/// Searches every question of the question file and streams the records.
pub fn cmd_search(globals: &Globals, args: &SearchArgs) -> Result<ExitStatus, CommandError> {
    let config_path = globals
        .config
        .as_deref()
        .ok_or_else(|| CommandError::Usage("search needs --config".into()))?;
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = globals.seed {
        cfg.search.seed = seed;
    }
    if let Some(w) = globals.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let questions_path = args
        .questions
        .clone()
        .or_else(|| cfg.io.questions.clone())
        .ok_or_else(|| CommandError::Usage("no question file: pass --questions or set io.questions".into()))?;
    let out_path = args
        .out
        .clone()
        .or_else(|| cfg.io.out.clone())
        .ok_or_else(|| CommandError::Usage("no output file: pass --out or set io.out".into()))?;
    let prompts = cfg.prompt_set()?;

    let load = load_questions(&questions_path)?;
    for e in &load.rejected {
        warn!(file = %questions_path.display(), "skipping question {e}");
    }
    if load.records.is_empty() && !load.rejected.is_empty() {
        return Err(CommandError::Usage(format!(
            "{}: no valid questions",
            questions_path.display()
        )));
    }

    let ctx = BackendContext { prompts, tasks: Arc::new(TaskBook::default()), seed: cfg.search.seed };
    let members = build_ensemble(&cfg.ensemble, &ctx)?;
    let ensemble = Ensemble::concurrent(members, cfg.max_in_flight())
        .map_err(|e| CommandError::Pool(e.to_string()))?;
    let engine = Engine::new(ensemble, cfg.search.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CommandError::Pool(e.to_string()))?;

    let mut writer = RecordWriter::create(&out_path)?;
    let max_iterations = cfg.search.max_iterations;
    let mut tally = SearchTally::default();
    let mut interrupted = false;
    for chunk in load.records.chunks(cfg.workers) {
        if globals.interrupt.load(Ordering::SeqCst) {
            interrupted = true;
            break;
        }
        let results: Vec<_> = pool.install(|| chunk.par_iter().map(|q| engine.search(q)).collect());
        for (question, result) in chunk.iter().zip(results) {
            tally.attempts += 1;
            let outcome = match result {
                Ok(o) => o,
                Err(e) => {
                    warn!(question = %question.id, error = %e, "search failed");
                    tally.iterations += max_iterations as u64;
                    continue;
                }
            };
            if outcome.succeeded {
                tally.successes += 1;
                tally.iterations += outcome.iterations_used as u64;
            } else {
                tally.iterations += max_iterations as u64;
            }
            info!(question = %question.id, succeeded = outcome.succeeded, iterations = outcome.iterations_used, "searched");
            let record = outcome.into_record(question.clone(), SEARCH_METHOD, cfg.record_timing);
            if let Some(p) = &record.effective_path {
                tally.lengths.push((question.topic.clone(), p.len()));
            }
            writer.write(&record)?;
        }
    }

    let stats = path_stats(&tally.lengths);
    let ssr = tally.ratio(tally.successes);
    let avg_iterations = tally.ratio_u64(tally.iterations);
    match globals.format {
        Format::Machine => print_json(&json!({
            "questions": tally.attempts,
            "rejected_lines": load.rejected.len(),
            "succeeded": tally.successes,
            "success_rate": ssr,
            "avg_iterations": avg_iterations,
            "avg_iterations_note": "failures count as max_iterations",
            "records": writer.written(),
            "out": out_path,
            "interrupted": interrupted,
            "step_stats": stats,
        })),
        Format::Text => {
            emitln(format_args!("questions        {}", tally.attempts));
            if !load.rejected.is_empty() {
                emitln(format_args!("rejected lines   {}", load.rejected.len()));
            }
            emitln(format_args!("succeeded        {}", tally.successes));
            emitln(format_args!("SSR              {:.1}%", 100.0 * ssr.unwrap_or(0.0)));
            emitln(format_args!(
                "avg iterations   {:.2} (failures count as {max_iterations})",
                avg_iterations.unwrap_or(0.0)
            ));
            emitln(format_args!("records          {} -> {}", writer.written(), out_path.display()));
            if !stats.is_empty() {
                emitln(format_args!("reasoning steps"));
                emit(format_args!("{}", stats_rows(&stats)));
            }
            if interrupted {
                emitln(format_args!("interrupted: remaining questions were not searched"));
            }
        }
    }
    Ok(if interrupted {
        ExitStatus::Interrupted
    } else if tally.attempts > 0 && tally.successes == 0 {
        ExitStatus::AllFailed
    } else {
        ExitStatus::Success
    })
}

#[derive(Debug, Default)]
struct SearchTally {
    attempts: usize,
    successes: usize,
    iterations: u64,
    lengths: Vec<(Option<String>, usize)>,
}

impl SearchTally {
    fn ratio(&self, n: usize) -> Option<f64> {
        (self.attempts > 0).then(|| n as f64 / self.attempts as f64)
    }
    fn ratio_u64(&self, n: u64) -> Option<f64> {
        (self.attempts > 0).then(|| n as f64 / self.attempts as f64)
    }
}

fn default_sft_path(out: &Path) -> PathBuf {
    out.with_extension("sft.jsonl")
}

/// Turns raw search records into the final dataset: succeeded records only,
/// a seeded share of them with a reflective path, plus flattened SFT pairs.
pub fn cmd_build_dataset(globals: &Globals, args: &BuildDatasetArgs) -> Result<ExitStatus, CommandError> {
    let cfg = globals.config.as_deref().map(RunConfig::load).transpose()?;
    if let Some(cfg) = &cfg {
        cfg.validate()?;
    }
    let ratio = args
        .reflection_ratio
        .or(cfg.as_ref().and_then(|c| c.reflection_ratio))
        .unwrap_or(DEFAULT_REFLECTION_RATIO);
    validate_ratio(ratio)?;
    let seed = globals.seed.or(cfg.as_ref().map(|c| c.search.seed)).unwrap_or(0);
    let exploration = cfg
        .as_ref()
        .map_or(SearchConfig::default().exploration_c, |c| c.search.exploration_c);
    let reflect_prompt = match &cfg {
        Some(c) => c.prompt_set()?.reflect,
        None => PromptSet::default().reflect,
    };

    let load = read_records(&args.records)?;
    for e in &load.errors {
        warn!(file = %args.records.display(), "skipping record {e}");
    }
    let total = load.records.len();
    let mut kept: Vec<SearchRecord> = load
        .records
        .into_iter()
        .filter(|r| r.telemetry.succeeded && r.effective_path.as_ref().is_some_and(|p| !p.is_empty()))
        .collect();
    if kept.is_empty() {
        warn!(file = %args.records.display(), "no succeeded records; writing an empty dataset");
    }

    let mut reflective = 0;
    if !kept.is_empty() {
        let picks = sample_reflection_subset(&kept, SampleSize::Ratio(ratio), seed, exploration, &reflect_prompt)?;
        reflective = picks.len();
        for (i, path) in picks {
            kept[i].reflective_path = Some(path);
        }
    }
    write_records(&args.out, &kept)?;

    let sft_path = args.sft_out.clone().unwrap_or_else(|| default_sft_path(&args.out));
    let file = File::create(&sft_path).map_err(output_err(&sft_path))?;
    let mut sft = BufWriter::new(file);
    let mut samples = 0;
    for record in &kept {
        let mut kinds = vec![PathKind::Effective];
        if record.reflective_path.is_some() {
            kinds.push(PathKind::Reflective);
        }
        for kind in kinds {
            let sample = flatten_for_sft(record, kind)?;
            let line = serde_json::to_string(&sample).map_err(DatasetError::from)?;
            writeln!(sft, "{line}").map_err(output_err(&sft_path))?;
            samples += 1;
        }
    }
    sft.flush().map_err(output_err(&sft_path))?;

    match globals.format {
        Format::Machine => print_json(&json!({
            "records_read": total,
            "skipped_lines": load.errors.len(),
            "kept": kept.len(),
            "reflective": reflective,
            "reflection_ratio": ratio,
            "sft_samples": samples,
            "out": args.out,
            "sft_out": sft_path,
        })),
        Format::Text => {
            emitln(format_args!("records read     {total}"));
            if !load.errors.is_empty() {
                emitln(format_args!("skipped lines    {}", load.errors.len()));
            }
            emitln(format_args!("kept (succeeded) {}", kept.len()));
            emitln(format_args!("reflective       {reflective} (ratio {ratio})"));
            emitln(format_args!("dataset          {}", args.out.display()));
            emitln(format_args!("sft samples      {samples} -> {}", sft_path.display()));
        }
    }
    Ok(ExitStatus::Success)
}

/// Reasoning-step distribution of the effective paths in a record file.
pub fn cmd_analyze(globals: &Globals, args: &AnalyzeArgs) -> Result<ExitStatus, CommandError> {
    let load = read_records(&args.records)?;
    for e in &load.errors {
        warn!(file = %args.records.display(), "skipping record {e}");
    }
    let overall = match step_stats(&load.records, false) {
        Ok(s) => s,
        Err(DatasetError::EmptyInput) => {
            eprintln!("{}: no records with an effective path", args.records.display());
            return Ok(ExitStatus::AllFailed);
        }
        Err(e) => return Err(e.into()),
    };
    let by_topic = step_stats(&load.records, true)?;
    match globals.format {
        Format::Machine => print_json(&json!({
            "records": load.records.len(),
            "skipped_lines": load.errors.len(),
            "overall": overall[0],
            "by_topic": by_topic,
        })),
        Format::Text => {
            emitln(format_args!("records          {}", load.records.len()));
            emitln(format_args!("with a path      {}", overall[0].count));
            emitln(format_args!("mean steps       {:.2}", overall[0].mean));
            emit(format_args!("{}", stats_rows(&overall)));
            emit(format_args!("{}", stats_rows(&by_topic)));
        }
    }
    Ok(ExitStatus::Success)
}

/// Runs the benchmark described by the bench config.
pub fn cmd_bench(globals: &Globals, args: &BenchArgs) -> Result<ExitStatus, CommandError> {
    let path = globals
        .config
        .as_deref()
        .ok_or_else(|| CommandError::Usage("bench needs --config".into()))?;
    let mut spec = load_bench_spec(path)?;
    if let Some(seed) = globals.seed {
        spec.seed = seed;
    }
    if let Some(w) = globals.workers {
        spec.workers = w;
    }
    let report = run_bench_spec(&spec)?;
    if let Some(p) = &args.report {
        let text = serde_json::to_string_pretty(&report).map_err(DatasetError::from)?;
        std::fs::write(p, text + "\n").map_err(output_err(p))?;
    }
    match globals.format {
        Format::Machine => print_json(&serde_json::to_value(&report).map_err(DatasetError::from)?),
        Format::Text => emit(format_args!("{}", report.render_table())),
    }
    Ok(ExitStatus::Success)
}
