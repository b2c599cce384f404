//! C ABI for the `xfernas` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`,
//! `*_load` or similar constructors and released with the matching
//! `*_free`. Every fallible call returns an [`XfnStatus`]; on failure the
//! message is available from [`xfn_last_error_message`] on the same thread.
//! Strings returned by the library are NUL-terminated and must be released
//! with [`xfn_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use xfernas::archspace::{fingerprint, genome_from_json, genome_to_json, sample_genome, tokenize};
use xfernas::search::{xfernas_search, SearchConfig};
use xfernas::taskbench::{ObservationHistory, Oracle, SuiteDescriptor, TaskSuite};
use xfernas::xfernet::{train, Head, TrainConfig, XferNet};
use xfernas::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Format = 4,
    UnknownTask = 5,
    Data = 6,
    Io = 7,
    Checkpoint = 8,
    Search = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A genome (normal and reduction cell).
pub struct XfnGenome(xfernas::archspace::Genome);
/// A synthetic multi-task oracle.
pub struct XfnSuite(TaskSuite);
/// An observation history.
pub struct XfnHistory(ObservationHistory);
/// A trained surrogate.
pub struct XfnModel(XferNet);

/// Surrogate training settings. `max_steps < 0` means no cap.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct XfnTrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: u64,
    pub batch_size: u64,
    pub seed: u64,
    pub max_steps: i64,
    pub clip_norm: f64,
    pub head_epochs: u64,
}

/// Search settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct XfnSearchConfig {
    pub budget: u64,
    pub eta: f64,
    pub max_ascent_steps: u64,
    pub starts_per_round: u64,
    pub rounds: u64,
    pub seed: u64,
    pub train: XfnTrainConfig,
}

impl From<&TrainConfig> for XfnTrainConfig {
    fn from(c: &TrainConfig) -> Self {
        XfnTrainConfig {
            alpha: c.alpha,
            lr: c.lr,
            weight_decay: c.weight_decay,
            epochs: c.epochs as u64,
            batch_size: c.batch_size as u64,
            seed: c.seed,
            max_steps: c.max_steps.map_or(-1, |s| s as i64),
            clip_norm: c.clip_norm,
            head_epochs: c.head_epochs as u64,
        }
    }
}

impl From<&XfnTrainConfig> for TrainConfig {
    fn from(c: &XfnTrainConfig) -> Self {
        TrainConfig {
            alpha: c.alpha,
            lr: c.lr,
            weight_decay: c.weight_decay,
            epochs: c.epochs as usize,
            batch_size: c.batch_size as usize,
            seed: c.seed,
            max_steps: (c.max_steps >= 0).then_some(c.max_steps as usize),
            clip_norm: c.clip_norm,
            head_epochs: c.head_epochs as usize,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> XfnStatus {
    match e {
        Error::InvalidConfig(_) => XfnStatus::InvalidConfig,
        Error::Format { .. } | Error::Token { .. } | Error::Json(_) | Error::Line { .. } => {
            XfnStatus::Format
        }
        Error::UnknownTask(_) => XfnStatus::UnknownTask,
        Error::Data(_) | Error::UndefinedCorrelation(_) | Error::Csv(_) => XfnStatus::Data,
        Error::Io { .. } => XfnStatus::Io,
        Error::Checkpoint(_) => XfnStatus::Checkpoint,
        Error::Search(_) | Error::OracleFailed { .. } => XfnStatus::Search,
    }
}

struct Fail(XfnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(XfnStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> XfnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            XfnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            XfnStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(XfnStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(XfnStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(XfnStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("NUL bytes removed")
        .into_raw()
}

/// Copies `s` plus a NUL terminator into `buf`. Returns the full length
/// needed (excluding the terminator) through `needed`.
unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Fail> {
    if let Some(n) = needed.as_mut() {
        *n = s.len();
    }
    if buf.is_null() || cap <= s.len() {
        return Err(Fail(
            XfnStatus::BufferTooSmall,
            format!("buffer of {cap} bytes cannot hold {} bytes", s.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xfn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`. Returns the
/// message length (excluding the terminator), or 0 if there is none. The
/// message is truncated to fit `cap`.
#[no_mangle]
pub unsafe extern "C" fn xfn_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn xfn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default training settings.
#[no_mangle]
pub extern "C" fn xfn_train_config_default() -> XfnTrainConfig {
    (&TrainConfig::default()).into()
}

/// Default search settings.
#[no_mangle]
pub extern "C" fn xfn_search_config_default() -> XfnSearchConfig {
    let d = SearchConfig::default();
    XfnSearchConfig {
        budget: d.budget as u64,
        eta: d.eta,
        max_ascent_steps: d.max_ascent_steps as u64,
        starts_per_round: d.starts_per_round as u64,
        rounds: d.rounds as u64,
        seed: d.seed,
        train: (&d.train).into(),
    }
}

/// Draws a random genome with `blocks` blocks per cell.
#[no_mangle]
pub unsafe extern "C" fn xfn_genome_sample(
    seed: u64,
    blocks: usize,
    genome_out: *mut *mut XfnGenome,
) -> XfnStatus {
    guard(|| {
        let slot = out(genome_out, "genome_out")?;
        *slot = boxed(XfnGenome(sample_genome(seed, blocks)?));
        Ok(())
    })
}

/// Parses a genome from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn xfn_genome_from_json(
    json: *const c_char,
    genome_out: *mut *mut XfnGenome,
) -> XfnStatus {
    guard(|| {
        let slot = out(genome_out, "genome_out")?;
        *slot = boxed(XfnGenome(genome_from_json(text(json, "json")?)?));
        Ok(())
    })
}

/// Serializes a genome to JSON. Free the result with `xfn_string_free`.
#[no_mangle]
pub unsafe extern "C" fn xfn_genome_to_json(
    genome: *const XfnGenome,
    json_out: *mut *mut c_char,
) -> XfnStatus {
    guard(|| {
        let g = obj(genome, "genome")?;
        *out(json_out, "json_out")? = c_string(genome_to_json(&g.0));
        Ok(())
    })
}

/// Writes the 32-character hex fingerprint into `buf` (at least 33 bytes).
#[no_mangle]
pub unsafe extern "C" fn xfn_genome_fingerprint(
    genome: *const XfnGenome,
    buf: *mut c_char,
    cap: usize,
) -> XfnStatus {
    guard(|| {
        let g = obj(genome, "genome")?;
        copy_out(&fingerprint(&g.0), buf, cap, ptr::null_mut())
    })
}

/// Blocks per cell.
#[no_mangle]
pub unsafe extern "C" fn xfn_genome_blocks(genome: *const XfnGenome) -> usize {
    genome.as_ref().map_or(0, |g| g.0.num_blocks())
}

/// Copies the token sequence into `tokens` (capacity `cap`); the sequence
/// length is written to `len_out` even when the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn xfn_genome_tokens(
    genome: *const XfnGenome,
    tokens: *mut u32,
    cap: usize,
    len_out: *mut usize,
) -> XfnStatus {
    guard(|| {
        let g = obj(genome, "genome")?;
        let seq = tokenize(&g.0);
        if let Some(n) = len_out.as_mut() {
            *n = seq.len();
        }
        if tokens.is_null() || cap < seq.len() {
            return Err(Fail(
                XfnStatus::BufferTooSmall,
                format!("token buffer of {cap} cannot hold {}", seq.len()),
            ));
        }
        for (i, &t) in seq.tokens().iter().enumerate() {
            *tokens.add(i) = t as u32;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn xfn_genome_free(genome: *mut XfnGenome) {
    if !genome.is_null() {
        drop(Box::from_raw(genome));
    }
}

/// Creates a suite; the last of `n_tasks` tasks is the target.
#[no_mangle]
pub unsafe extern "C" fn xfn_suite_new(
    seed: u64,
    n_tasks: usize,
    tau: f64,
    noise_sigma: f64,
    blocks: usize,
    suite_out: *mut *mut XfnSuite,
) -> XfnStatus {
    guard(|| {
        let slot = out(suite_out, "suite_out")?;
        let suite = TaskSuite::new(SuiteDescriptor {
            seed,
            n_tasks,
            tau,
            noise_sigma,
            blocks,
        })?;
        *slot = boxed(XfnSuite(suite));
        Ok(())
    })
}

/// Loads a suite descriptor file.
#[no_mangle]
pub unsafe extern "C" fn xfn_suite_load(
    path: *const c_char,
    suite_out: *mut *mut XfnSuite,
) -> XfnStatus {
    guard(|| {
        let slot = out(suite_out, "suite_out")?;
        let d = SuiteDescriptor::load(text(path, "path")?)?;
        *slot = boxed(XfnSuite(TaskSuite::new(d)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn xfn_suite_num_tasks(suite: *const XfnSuite) -> usize {
    suite.as_ref().map_or(0, |s| s.0.tasks().len())
}

/// Scores `genome` on the task named `task` (e.g. `"task_4"`).
#[no_mangle]
pub unsafe extern "C" fn xfn_suite_evaluate(
    suite: *const XfnSuite,
    task: *const c_char,
    genome: *const XfnGenome,
    score_out: *mut f64,
) -> XfnStatus {
    guard(|| {
        let s = obj(suite, "suite")?;
        let g = obj(genome, "genome")?;
        let task = xfernas::taskbench::TaskId::new(text(task, "task")?);
        *out(score_out, "score_out")? = s.0.evaluate(&task, &g.0)?;
        Ok(())
    })
}

/// Builds source knowledge: `per_task` random genomes per source task.
#[no_mangle]
pub unsafe extern "C" fn xfn_suite_build_knowledge(
    suite: *const XfnSuite,
    per_task: usize,
    seed: u64,
    history_out: *mut *mut XfnHistory,
) -> XfnStatus {
    guard(|| {
        let s = obj(suite, "suite")?;
        let slot = out(history_out, "history_out")?;
        *slot = boxed(XfnHistory(s.0.build_source_knowledge(per_task, seed)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn xfn_suite_free(suite: *mut XfnSuite) {
    if !suite.is_null() {
        drop(Box::from_raw(suite));
    }
}

/// Loads a JSONL history.
#[no_mangle]
pub unsafe extern "C" fn xfn_history_load(
    path: *const c_char,
    history_out: *mut *mut XfnHistory,
) -> XfnStatus {
    guard(|| {
        let slot = out(history_out, "history_out")?;
        *slot = boxed(XfnHistory(ObservationHistory::load(text(path, "path")?)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn xfn_history_save(
    history: *const XfnHistory,
    path: *const c_char,
) -> XfnStatus {
    guard(|| {
        obj(history, "history")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

/// Number of records.
#[no_mangle]
pub unsafe extern "C" fn xfn_history_len(history: *const XfnHistory) -> usize {
    history.as_ref().map_or(0, |h| h.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn xfn_history_free(history: *mut XfnHistory) {
    if !history.is_null() {
        drop(Box::from_raw(history));
    }
}

/// Trains a fresh surrogate on `history`.
#[no_mangle]
pub unsafe extern "C" fn xfn_model_train(
    history: *const XfnHistory,
    config: *const XfnTrainConfig,
    model_out: *mut *mut XfnModel,
) -> XfnStatus {
    guard(|| {
        let h = obj(history, "history")?;
        let cfg: TrainConfig = obj(config, "config")?.into();
        let slot = out(model_out, "model_out")?;
        *slot = boxed(XfnModel(train(&h.0, &cfg)?.0));
        Ok(())
    })
}

/// Loads a checkpoint written by `xfn_model_save`.
#[no_mangle]
pub unsafe extern "C" fn xfn_model_load(
    path: *const c_char,
    model_out: *mut *mut XfnModel,
) -> XfnStatus {
    guard(|| {
        let slot = out(model_out, "model_out")?;
        *slot = boxed(XfnModel(XferNet::load(text(path, "path")?)?));
        Ok(())
    })
}

/// Writes the checkpoint to `path` and the task list to
/// `<path>.tasks.json`.
#[no_mangle]
pub unsafe extern "C" fn xfn_model_save(model: *const XfnModel, path: *const c_char) -> XfnStatus {
    guard(|| {
        obj(model, "model")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

fn check_blocks(m: &XferNet, g: &xfernas::archspace::Genome) -> Result<(), Fail> {
    if m.blocks() != g.num_blocks() {
        return Err(invalid(format!(
            "genome has {} blocks, surrogate expects {}",
            g.num_blocks(),
            m.blocks()
        )));
    }
    Ok(())
}

/// Predicted score of `genome`. `task` selects a task head; null selects
/// the universal head.
#[no_mangle]
pub unsafe extern "C" fn xfn_model_predict(
    model: *const XfnModel,
    genome: *const XfnGenome,
    task: *const c_char,
    score_out: *mut f64,
) -> XfnStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let g = obj(genome, "genome")?;
        check_blocks(&m.0, &g.0)?;
        let head = if task.is_null() {
            Head::Universal
        } else {
            Head::Task(text(task, "task")?)
        };
        let code = m.0.encode_genome(&g.0).code;
        *out(score_out, "score_out")? = m.0.predict(&code, head)?;
        Ok(())
    })
}

/// Encodes and greedily decodes `genome`.
#[no_mangle]
pub unsafe extern "C" fn xfn_model_reconstruct(
    model: *const XfnModel,
    genome: *const XfnGenome,
    genome_out: *mut *mut XfnGenome,
) -> XfnStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let g = obj(genome, "genome")?;
        check_blocks(&m.0, &g.0)?;
        let slot = out(genome_out, "genome_out")?;
        *slot = boxed(XfnGenome(m.0.reconstruct(&g.0)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn xfn_model_free(model: *mut XfnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the search on the suite's target task. `source` may be null for
/// the no-transfer variant. The report is returned as JSON (free with
/// `xfn_string_free`); `best_score_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn xfn_search(
    suite: *const XfnSuite,
    source: *const XfnHistory,
    config: *const XfnSearchConfig,
    report_json_out: *mut *mut c_char,
    best_score_out: *mut f64,
) -> XfnStatus {
    guard(|| {
        let s = obj(suite, "suite")?;
        let c = obj(config, "config")?;
        let json_slot = out(report_json_out, "report_json_out")?;
        let empty;
        let history = match source.as_ref() {
            Some(h) => &h.0,
            None => {
                empty = ObservationHistory::new(s.0.registry());
                &empty
            }
        };
        let cfg = SearchConfig {
            budget: c.budget as usize,
            eta: c.eta,
            max_ascent_steps: c.max_ascent_steps as usize,
            starts_per_round: c.starts_per_round as usize,
            rounds: c.rounds as usize,
            seed: c.seed,
            blocks: s.0.descriptor().blocks,
            train: (&c.train).into(),
        };
        let report = xfernas_search(&s.0, s.0.target(), history, None, &cfg)?;
        if let Some(b) = best_score_out.as_mut() {
            *b = report.best().map_or(f64::NAN, |e| e.score);
        }
        *json_slot = c_string(report.to_json()?);
        Ok(())
    })
}
