use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::manifest::{evaluator_prompt_id, ExperimentManifest};
use super::store::{read_entries, read_manifest, StoreEntry, StoreError, StoreWriter};
use super::ExperimentError;
use crate::corpus::{instantiate_tqp, Corpus};
use crate::providers::{Outcome, Provider, SessionRecord};
use crate::tqp::parse_evaluation;

/// Subject and evaluator providers for one run, keyed by provider id.
#[derive(Debug)]
pub struct Providers {
    pub subject: Provider,
    pub evaluators: BTreeMap<String, Provider>,
}

impl Providers {
    pub fn new(subject: Provider, evaluators: impl IntoIterator<Item = Provider>) -> Self {
        Providers {
            subject,
            evaluators: evaluators
                .into_iter()
                .map(|p| (p.id().to_string(), p))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads per phase.
    pub jobs: usize,
    /// Extra evaluator sessions allowed for a slot whose evaluation was
    /// refused or unparseable. Zero records the failure and moves on.
    pub evaluation_retries: u32,
    /// Stop after this many store appends, as if the process were killed.
    pub record_limit: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            evaluation_retries: 0,
            record_limit: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SlotCounts {
    pub subject_ok: usize,
    pub subject_failed: usize,
    pub evaluations_usable: usize,
    pub evaluations_unusable: usize,
}

/// What one invocation did. Counts cover the whole store after the run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub output_dir: std::path::PathBuf,
    pub records_appended: usize,
    pub subject_sessions_run: usize,
    pub evaluator_sessions_run: usize,
    pub slots_skipped: usize,
    pub refusals: usize,
    pub parse_failures: usize,
    pub transport_errors: usize,
    pub interrupted: bool,
    pub per_condition: BTreeMap<String, SlotCounts>,
}

type SubjectKey = (String, u32);
type EvalKey = (String, String, u32, u32);

#[derive(Default)]
struct EvalHistory {
    sessions: Vec<SessionRecord>,
    /// record id -> parse succeeded
    parsed: BTreeMap<String, bool>,
}

impl EvalHistory {
    fn usable(&self) -> bool {
        self.sessions
            .iter()
            .any(|s| s.outcome == Outcome::Ok && self.parsed.get(&s.record_id) == Some(&true))
    }

    fn unusable_attempts(&self) -> u32 {
        self.sessions
            .iter()
            .filter(|s| match s.outcome {
                Outcome::Refusal => true,
                Outcome::Ok => self.parsed.get(&s.record_id) == Some(&false),
                Outcome::TransportError => false,
            })
            .count() as u32
    }

    fn unparsed(&self) -> Option<&SessionRecord> {
        self.sessions
            .iter()
            .find(|s| s.outcome == Outcome::Ok && !self.parsed.contains_key(&s.record_id))
    }
}

#[derive(Default)]
struct History {
    subjects: BTreeMap<SubjectKey, Vec<SessionRecord>>,
    evals: BTreeMap<EvalKey, EvalHistory>,
}

impl History {
    fn from_entries(entries: Vec<StoreEntry>) -> Self {
        let mut h = History::default();
        let mut parsed = Vec::new();
        for entry in entries {
            match entry {
                StoreEntry::SubjectSession {
                    condition,
                    response_index,
                    session,
                } => h
                    .subjects
                    .entry((condition, response_index))
                    .or_default()
                    .push(session),
                StoreEntry::EvaluatorSession {
                    evaluator_id,
                    condition,
                    response_index,
                    eval_index,
                    session,
                    ..
                } => h
                    .evals
                    .entry((evaluator_id, condition, response_index, eval_index))
                    .or_default()
                    .sessions
                    .push(session),
                StoreEntry::ParsedEval {
                    record_id,
                    evaluator_id,
                    condition,
                    response_index,
                    eval_index,
                    evaluation,
                    ..
                } => parsed.push((
                    (evaluator_id, condition, response_index, eval_index),
                    record_id,
                    evaluation.is_some(),
                )),
            }
        }
        for (key, record_id, ok) in parsed {
            h.evals.entry(key).or_default().parsed.insert(record_id, ok);
        }
        h
    }

    /// The subject response a slot's evaluations build on, if any.
    fn subject_response(&self, key: &SubjectKey) -> Option<&SessionRecord> {
        self.subjects
            .get(key)?
            .iter()
            .rev()
            .find(|s| s.outcome == Outcome::Ok)
    }

    fn subject_settled(&self, key: &SubjectKey) -> bool {
        self.subjects
            .get(key)
            .and_then(|v| v.last())
            .is_some_and(|s| s.outcome != Outcome::TransportError)
    }
}

enum Halt {
    Limit,
    Store(StoreError),
}

struct Sink {
    writer: Mutex<StoreWriter>,
    limit: Option<usize>,
    halted: AtomicBool,
    error: Mutex<Option<StoreError>>,
    subject_runs: AtomicUsize,
    evaluator_runs: AtomicUsize,
}

impl Sink {
    fn append(&self, entry: StoreEntry) -> Result<(), Halt> {
        let mut w = self.writer.lock().expect("store writer poisoned");
        if self.halted.load(Ordering::SeqCst) {
            return Err(Halt::Limit);
        }
        if self.limit.is_some_and(|l| w.appended() >= l) {
            self.halted.store(true, Ordering::SeqCst);
            return Err(Halt::Limit);
        }
        w.append(&entry).map_err(|e| {
            self.halted.store(true, Ordering::SeqCst);
            Halt::Store(e)
        })
    }

    fn halt(&self, h: Halt) {
        self.halted.store(true, Ordering::SeqCst);
        if let Halt::Store(e) = h {
            self.error
                .lock()
                .expect("error slot poisoned")
                .get_or_insert(e);
        }
    }

    fn halted(&self) -> bool {
        self.halted.load(Ordering::SeqCst)
    }
}

fn run_pool<T: Sync>(
    jobs: usize,
    items: &[T],
    sink: &Sink,
    work: impl Fn(&T) -> Result<(), Halt> + Sync,
) {
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if sink.halted() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { return };
                if let Err(h) = work(item) {
                    sink.halt(h);
                    return;
                }
            });
        }
    });
}

struct EvalJob {
    evaluator_id: String,
    condition: String,
    response_index: u32,
    eval_index: u32,
    subject: SessionRecord,
    pending_parse: Option<SessionRecord>,
    unusable: u32,
}

/// Executes (or resumes) the run described by `manifest`.
///
/// Slots already settled in the store are skipped: a subject slot is settled
/// once it has an ok or refused session, an evaluator slot once it has a
/// usable evaluation or has used up its retry budget. Transport failures are
/// retried on the next invocation.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    corpus: &Corpus,
    providers: &Providers,
    options: &RunOptions,
) -> Result<RunSummary, ExperimentError> {
    manifest.validate(corpus)?;
    if providers.subject.id() != manifest.subject.provider_id {
        return Err(ExperimentError::MissingProvider(
            manifest.subject.provider_id.clone(),
        ));
    }
    for e in &manifest.evaluators {
        if !providers.evaluators.contains_key(&e.provider_id) {
            return Err(ExperimentError::MissingProvider(e.provider_id.clone()));
        }
    }
    let dir = &manifest.output_dir;
    let writer = StoreWriter::open(dir)?;
    match read_manifest(dir) {
        Ok(previous) if !previous.same_design(manifest) => {
            return Err(ExperimentError::ManifestMismatch(dir.clone()))
        }
        Ok(_) => {}
        Err(StoreError::Missing(_)) => writer.write_manifest(manifest)?,
        Err(e) => return Err(e.into()),
    }
    let history = History::from_entries(read_entries(dir)?);
    let sink = Sink {
        writer: Mutex::new(writer),
        limit: options.record_limit,
        halted: AtomicBool::new(false),
        error: Mutex::new(None),
        subject_runs: AtomicUsize::new(0),
        evaluator_runs: AtomicUsize::new(0),
    };
    let tqp = corpus.require(&manifest.tqp_id)?;
    let mut skipped = 0;

    // Phase 1: subject sessions.
    let mut subject_jobs = Vec::new();
    for condition in &manifest.conditions {
        for r in 1..=manifest.tip_responses_per_condition {
            let key = (condition.clone(), r);
            if history.subject_settled(&key) {
                skipped += 1;
            } else {
                subject_jobs.push(key);
            }
        }
    }
    let fresh_subjects: Mutex<BTreeMap<SubjectKey, SessionRecord>> = Mutex::new(BTreeMap::new());
    run_pool(options.jobs, &subject_jobs, &sink, |(condition, r)| {
        let text = &corpus.require(condition).expect("validated condition").text;
        let record = match providers.subject.complete_disposable(text, condition, *r) {
            Ok(rec) => rec,
            Err(e) => e.into_record().expect("prompt text is non-empty"),
        };
        sink.subject_runs.fetch_add(1, Ordering::SeqCst);
        sink.append(StoreEntry::SubjectSession {
            condition: condition.clone(),
            response_index: *r,
            session: record.clone(),
        })?;
        if record.outcome == Outcome::Ok {
            fresh_subjects
                .lock()
                .expect("subject map poisoned")
                .insert((condition.clone(), *r), record);
        }
        Ok(())
    });
    let fresh_subjects = fresh_subjects.into_inner().expect("subject map poisoned");

    // Phase 2: evaluator sessions.
    let mut eval_jobs = Vec::new();
    if !sink.halted() {
        for evaluator in &manifest.evaluators {
            for condition in &manifest.conditions {
                for r in 1..=manifest.tip_responses_per_condition {
                    let skey = (condition.clone(), r);
                    let Some(subject) = fresh_subjects
                        .get(&skey)
                        .or_else(|| history.subject_response(&skey))
                    else {
                        continue;
                    };
                    for e in 1..=manifest.tqp_evals_per_response {
                        let ekey = (evaluator.provider_id.clone(), condition.clone(), r, e);
                        let (pending_parse, unusable) = match history.evals.get(&ekey) {
                            Some(h) if h.usable() => {
                                skipped += 1;
                                continue;
                            }
                            Some(h) => (h.unparsed().cloned(), h.unusable_attempts()),
                            None => (None, 0),
                        };
                        if pending_parse.is_none() && unusable > options.evaluation_retries {
                            skipped += 1;
                            continue;
                        }
                        eval_jobs.push(EvalJob {
                            evaluator_id: evaluator.provider_id.clone(),
                            condition: condition.clone(),
                            response_index: r,
                            eval_index: e,
                            subject: subject.clone(),
                            pending_parse,
                            unusable,
                        });
                    }
                }
            }
        }
    }
    run_pool(options.jobs, &eval_jobs, &sink, |job| {
        let provider = &providers.evaluators[&job.evaluator_id];
        let mut unusable = job.unusable;
        if let Some(rec) = &job.pending_parse {
            if record_parse(&sink, job, rec)? {
                return Ok(());
            }
            unusable += 1;
        }
        let prompt_id = evaluator_prompt_id(&manifest.tqp_id, &job.condition, job.response_index);
        let text = instantiate_tqp(tqp, &job.subject.response_text)
            .expect("validated TQP carries one marker");
        while unusable <= options.evaluation_retries {
            let record = match provider.complete_disposable(&text, &prompt_id, job.eval_index) {
                Ok(rec) => rec,
                Err(e) => e.into_record().expect("TQP text is non-empty"),
            };
            sink.evaluator_runs.fetch_add(1, Ordering::SeqCst);
            sink.append(StoreEntry::EvaluatorSession {
                evaluator_id: job.evaluator_id.clone(),
                condition: job.condition.clone(),
                response_index: job.response_index,
                eval_index: job.eval_index,
                subject_record_id: job.subject.record_id.clone(),
                session: record.clone(),
            })?;
            match record.outcome {
                Outcome::Ok if record_parse(&sink, job, &record)? => return Ok(()),
                Outcome::TransportError => return Ok(()),
                _ => unusable += 1,
            }
        }
        Ok(())
    });

    if let Some(e) = sink.error.lock().expect("error slot poisoned").take() {
        return Err(e.into());
    }
    let interrupted = sink.halted();
    let records_appended = sink
        .writer
        .lock()
        .expect("store writer poisoned")
        .appended();
    let mut summary = RunSummary {
        output_dir: dir.clone(),
        records_appended,
        subject_sessions_run: sink.subject_runs.load(Ordering::SeqCst),
        evaluator_sessions_run: sink.evaluator_runs.load(Ordering::SeqCst),
        slots_skipped: skipped,
        interrupted,
        ..RunSummary::default()
    };
    drop(sink);
    tally(
        &mut summary,
        manifest,
        History::from_entries(read_entries(dir)?),
    );
    Ok(summary)
}

fn record_parse(sink: &Sink, job: &EvalJob, record: &SessionRecord) -> Result<bool, Halt> {
    let (evaluation, error, warnings) = match parse_evaluation(&record.response_text) {
        Ok((eval, diags)) => (Some(eval), None, diags.warnings),
        Err(e) => (None, Some(e.kind), e.diagnostics.warnings),
    };
    let usable = evaluation.is_some();
    sink.append(StoreEntry::ParsedEval {
        record_id: record.record_id.clone(),
        evaluator_id: job.evaluator_id.clone(),
        condition: job.condition.clone(),
        response_index: job.response_index,
        eval_index: job.eval_index,
        evaluation,
        error,
        warnings,
    })?;
    Ok(usable)
}

/// Counts settle per slot: a slot that failed once and later succeeded is
/// not counted as a failure.
fn tally(summary: &mut RunSummary, manifest: &ExperimentManifest, history: History) {
    for condition in &manifest.conditions {
        summary.per_condition.entry(condition.clone()).or_default();
    }
    for ((condition, _), sessions) in &history.subjects {
        let counts = summary.per_condition.entry(condition.clone()).or_default();
        match sessions.last().map(|s| s.outcome) {
            Some(Outcome::Ok) => counts.subject_ok += 1,
            Some(Outcome::Refusal) => {
                counts.subject_failed += 1;
                summary.refusals += 1;
            }
            Some(Outcome::TransportError) => {
                counts.subject_failed += 1;
                summary.transport_errors += 1;
            }
            None => {}
        }
    }
    for ((_, condition, _, _), h) in &history.evals {
        let counts = summary.per_condition.entry(condition.clone()).or_default();
        if h.usable() {
            counts.evaluations_usable += 1;
            continue;
        }
        counts.evaluations_unusable += 1;
        match h.sessions.last() {
            Some(s) if s.outcome == Outcome::Refusal => summary.refusals += 1,
            Some(s) if s.outcome == Outcome::TransportError => summary.transport_errors += 1,
            Some(s) if h.parsed.get(&s.record_id) == Some(&false) => summary.parse_failures += 1,
            _ => {}
        }
    }
}
