//! C ABI over the tasklint detector.
//!
//! Handles are opaque pointers created and freed by this library; every
//! fallible call returns a [`TasklintStatus`] and stores a thread-local
//! message retrievable via [`tasklint_last_error_message`]. Strings
//! handed out through [`TasklintFinding`] are owned by the report handle
//! and stay valid until the report is freed.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use libc::{c_char, size_t};

use tasklint::dataset::Label;
use tasklint::error::Error;
use tasklint::pipeline::{DetectReport, Detector};

/// Result codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TasklintStatus {
    TasklintOk = 0,
    TasklintInvalidArgument = 1,
    TasklintIo = 2,
    TasklintParse = 3,
    TasklintModelMissing = 4,
    TasklintInternal = 5,
}

/// One scored task, with strings borrowed from the report handle.
#[repr(C)]
pub struct TasklintFinding {
    pub file: *const c_char,
    pub line: u64,
    pub task_name: *const c_char,
    pub module_key: *const c_char,
    pub p_inconsistent: f64,
    /// True when the verdict is inconsistent at the detector threshold.
    pub inconsistent: bool,
    pub model_version: *const c_char,
}

/// Opaque handle over the loaded per-module models.
pub struct TasklintDetector {
    inner: Detector,
}

struct FindingRow {
    file: CString,
    line: u64,
    task_name: CString,
    module_key: CString,
    p_inconsistent: f64,
    inconsistent: bool,
    model_version: CString,
}

/// Opaque handle over one scan's results.
pub struct TasklintReport {
    rows: Vec<FindingRow>,
    skipped: usize,
    inconsistent: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &Error) -> TasklintStatus {
    match err {
        Error::Io { .. } | Error::UnreadableRoot(_) => TasklintStatus::TasklintIo,
        Error::YamlParse { .. } => TasklintStatus::TasklintParse,
        Error::ModelMissing { .. } => TasklintStatus::TasklintModelMissing,
        Error::BadConfig(_) => TasklintStatus::TasklintInvalidArgument,
        _ => TasklintStatus::TasklintInternal,
    }
}

fn lossy_cstring(text: &str) -> CString {
    CString::new(text.replace('\0', " ")).unwrap_or_default()
}

fn report_from(scan: DetectReport) -> TasklintReport {
    let inconsistent = scan.inconsistent_count();
    let rows = scan
        .findings
        .into_iter()
        .map(|f| FindingRow {
            file: lossy_cstring(&f.source.path.display().to_string()),
            line: f.source.line as u64,
            task_name: lossy_cstring(&f.task_name),
            module_key: lossy_cstring(&f.module_key),
            p_inconsistent: f.p_inconsistent,
            inconsistent: f.verdict == Label::Inconsistent,
            model_version: lossy_cstring(&f.model_version),
        })
        .collect();
    TasklintReport {
        rows,
        skipped: scan.skipped.len(),
        inconsistent,
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, TasklintStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} must not be null"));
        return Err(TasklintStatus::TasklintInvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid utf-8"));
        TasklintStatus::TasklintInvalidArgument
    })
}

fn guard<F: FnOnce() -> TasklintStatus>(body: F) -> TasklintStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            TasklintStatus::TasklintInternal
        }
    }
}

/// Load every module model from a repository directory.
///
/// `threshold` is the p_inconsistent cutoff for verdicts (0.5 is the
/// default linter behavior). On success `*out` owns the detector; free
/// it with [`tasklint_detector_free`].
///
/// # Safety
/// `model_dir` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn tasklint_detector_open(
    model_dir: *const c_char,
    threshold: f64,
    out: *mut *mut TasklintDetector,
) -> TasklintStatus {
    guard(|| {
        if out.is_null() {
            set_error("out must not be null");
            return TasklintStatus::TasklintInvalidArgument;
        }
        *out = ptr::null_mut();
        let dir = match required_str(model_dir, "model_dir") {
            Ok(dir) => dir,
            Err(status) => return status,
        };
        if !(0.0..=1.0).contains(&threshold) {
            set_error("threshold must be in [0, 1]");
            return TasklintStatus::TasklintInvalidArgument;
        }
        match Detector::load(Path::new(dir), threshold) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TasklintDetector { inner }));
                TasklintStatus::TasklintOk
            }
            Err(err) => {
                set_error(&err.to_string());
                status_for(&err)
            }
        }
    })
}

/// Free a detector created by [`tasklint_detector_open`]. Null is a no-op.
///
/// # Safety
/// `detector` must be null or a pointer from [`tasklint_detector_open`]
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn tasklint_detector_free(detector: *mut TasklintDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Number of module models the detector holds.
///
/// # Safety
/// `detector` must be a live pointer from [`tasklint_detector_open`].
#[no_mangle]
pub unsafe extern "C" fn tasklint_detector_module_count(
    detector: *const TasklintDetector,
) -> size_t {
    if detector.is_null() {
        return 0;
    }
    (*detector).inner.module_count()
}

unsafe fn scan_common(
    detector: *const TasklintDetector,
    out: *mut *mut TasklintReport,
    scan: impl FnOnce(&Detector) -> tasklint::Result<DetectReport>,
) -> TasklintStatus {
    if out.is_null() {
        set_error("out must not be null");
        return TasklintStatus::TasklintInvalidArgument;
    }
    *out = ptr::null_mut();
    if detector.is_null() {
        set_error("detector must not be null");
        return TasklintStatus::TasklintInvalidArgument;
    }
    match scan(&(*detector).inner) {
        Ok(report) => {
            *out = Box::into_raw(Box::new(report_from(report)));
            TasklintStatus::TasklintOk
        }
        Err(err) => {
            set_error(&err.to_string());
            status_for(&err)
        }
    }
}

/// Scan a YAML document held in memory. `source_name` labels findings
/// (for example the editor buffer path).
///
/// # Safety
/// Pointer arguments must be valid; string arguments NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tasklint_scan_yaml(
    detector: *const TasklintDetector,
    yaml_text: *const c_char,
    source_name: *const c_char,
    out: *mut *mut TasklintReport,
) -> TasklintStatus {
    guard(|| {
        let text = match required_str(yaml_text, "yaml_text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let name = match required_str(source_name, "source_name") {
            Ok(name) => name,
            Err(status) => return status,
        };
        scan_common(detector, out, |d| d.scan_yaml(text, &PathBuf::from(name)))
    })
}

/// Scan one playbook or role task file on disk.
///
/// # Safety
/// Pointer arguments must be valid; string arguments NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tasklint_scan_file(
    detector: *const TasklintDetector,
    path: *const c_char,
    out: *mut *mut TasklintReport,
) -> TasklintStatus {
    guard(|| {
        let path = match required_str(path, "path") {
            Ok(path) => path,
            Err(status) => return status,
        };
        scan_common(detector, out, |d| d.scan_file(Path::new(path)))
    })
}

/// Number of scored tasks in the report.
///
/// # Safety
/// `report` must be null or a live pointer from a scan call.
#[no_mangle]
pub unsafe extern "C" fn tasklint_report_findings_len(report: *const TasklintReport) -> size_t {
    if report.is_null() {
        0
    } else {
        (*report).rows.len()
    }
}

/// Number of tasks that were seen but not scored (no model, unparseable).
///
/// # Safety
/// `report` must be null or a live pointer from a scan call.
#[no_mangle]
pub unsafe extern "C" fn tasklint_report_skipped_len(report: *const TasklintReport) -> size_t {
    if report.is_null() {
        0
    } else {
        (*report).skipped
    }
}

/// Number of findings whose verdict is inconsistent.
///
/// # Safety
/// `report` must be null or a live pointer from a scan call.
#[no_mangle]
pub unsafe extern "C" fn tasklint_report_inconsistent_count(
    report: *const TasklintReport,
) -> size_t {
    if report.is_null() {
        0
    } else {
        (*report).inconsistent
    }
}

/// Copy the `index`-th finding into `out`. The strings stay owned by the
/// report and are valid until [`tasklint_report_free`].
///
/// # Safety
/// `report` must be a live pointer from a scan call and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tasklint_report_finding(
    report: *const TasklintReport,
    index: size_t,
    out: *mut TasklintFinding,
) -> TasklintStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            set_error("report and out must not be null");
            return TasklintStatus::TasklintInvalidArgument;
        }
        let Some(row) = (*report).rows.get(index) else {
            set_error(&format!(
                "finding index {index} out of range ({} findings)",
                (*report).rows.len()
            ));
            return TasklintStatus::TasklintInvalidArgument;
        };
        *out = TasklintFinding {
            file: row.file.as_ptr(),
            line: row.line,
            task_name: row.task_name.as_ptr(),
            module_key: row.module_key.as_ptr(),
            p_inconsistent: row.p_inconsistent,
            inconsistent: row.inconsistent,
            model_version: row.model_version.as_ptr(),
        };
        TasklintStatus::TasklintOk
    })
}

/// Free a report created by a scan call. Null is a no-op.
///
/// # Safety
/// `report` must be null or a pointer from a scan call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tasklint_report_free(report: *mut TasklintReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tasklint_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tasklint_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
