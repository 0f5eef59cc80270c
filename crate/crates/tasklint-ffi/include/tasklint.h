/* C interface for the tasklint inconsistency detector. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes for every fallible call.
typedef enum TasklintStatus {
  TASKLINT_OK = 0,
  TASKLINT_INVALID_ARGUMENT = 1,
  TASKLINT_IO = 2,
  TASKLINT_PARSE = 3,
  TASKLINT_MODEL_MISSING = 4,
  TASKLINT_INTERNAL = 5,
} TasklintStatus;

// Opaque handle over the loaded per-module models.
typedef struct TasklintDetector TasklintDetector;

// Opaque handle over one scan's results.
typedef struct TasklintReport TasklintReport;

// One scored task, with strings borrowed from the report handle.
typedef struct TasklintFinding {
  const char *file;
  uint64_t line;
  const char *task_name;
  const char *module_key;
  double p_inconsistent;
  // True when the verdict is inconsistent at the detector threshold.
  bool inconsistent;
  const char *model_version;
} TasklintFinding;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load every module model from a repository directory.
//
// `threshold` is the p_inconsistent cutoff for verdicts (0.5 is the
// default linter behavior). On success `*out` owns the detector; free
// it with [`tasklint_detector_free`].
//
// # Safety
// `model_dir` must be a valid NUL-terminated string and `out` a valid
// pointer.
enum TasklintStatus tasklint_detector_open(const char *model_dir,
                                           double threshold,
                                           struct TasklintDetector **out);

// Free a detector created by [`tasklint_detector_open`]. Null is a no-op.
//
// # Safety
// `detector` must be null or a pointer from [`tasklint_detector_open`]
// that has not been freed.
void tasklint_detector_free(struct TasklintDetector *detector);

// Number of module models the detector holds.
//
// # Safety
// `detector` must be a live pointer from [`tasklint_detector_open`].
size_t tasklint_detector_module_count(const struct TasklintDetector *detector);

// Scan a YAML document held in memory. `source_name` labels findings
// (for example the editor buffer path).
//
// # Safety
// Pointer arguments must be valid; string arguments NUL-terminated.
enum TasklintStatus tasklint_scan_yaml(const struct TasklintDetector *detector,
                                       const char *yaml_text,
                                       const char *source_name,
                                       struct TasklintReport **out);

// Scan one playbook or role task file on disk.
//
// # Safety
// Pointer arguments must be valid; string arguments NUL-terminated.
enum TasklintStatus tasklint_scan_file(const struct TasklintDetector *detector,
                                       const char *path,
                                       struct TasklintReport **out);

// Number of scored tasks in the report.
//
// # Safety
// `report` must be null or a live pointer from a scan call.
size_t tasklint_report_findings_len(const struct TasklintReport *report);

// Number of tasks that were seen but not scored (no model, unparseable).
//
// # Safety
// `report` must be null or a live pointer from a scan call.
size_t tasklint_report_skipped_len(const struct TasklintReport *report);

// Number of findings whose verdict is inconsistent.
//
// # Safety
// `report` must be null or a live pointer from a scan call.
size_t tasklint_report_inconsistent_count(const struct TasklintReport *report);

// Copy the `index`-th finding into `out`. The strings stay owned by the
// report and are valid until [`tasklint_report_free`].
//
// # Safety
// `report` must be a live pointer from a scan call and `out` valid.
enum TasklintStatus tasklint_report_finding(const struct TasklintReport *report,
                                            size_t index,
                                            struct TasklintFinding *out);

// Free a report created by a scan call. Null is a no-op.
//
// # Safety
// `report` must be null or a pointer from a scan call, not yet freed.
void tasklint_report_free(struct TasklintReport *report);

// Message for the most recent error on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *tasklint_last_error_message(void);

// Library version as a static string.
const char *tasklint_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
