#ifndef GRIDMPC_H
#define GRIDMPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Controller selector for [`gridmpc_simulate`].
typedef enum GridmpcMode {
  GRIDMPC_MODE_NONE = 0,
  GRIDMPC_MODE_CMPC = 1,
  GRIDMPC_MODE_D3MPC = 2,
  GRIDMPC_MODE_VVC = 3,
} GridmpcMode;

// Result of every fallible call.
typedef enum GridmpcStatus {
  GRIDMPC_STATUS_OK = 0,
  GRIDMPC_STATUS_NULL_POINTER = 1,
  GRIDMPC_STATUS_INVALID_UTF8 = 2,
  // Malformed case, profiles or configuration.
  GRIDMPC_STATUS_INVALID_INPUT = 3,
  // The plant power flow diverged.
  GRIDMPC_STATUS_RUNTIME_FAILURE = 4,
  GRIDMPC_STATUS_OUT_OF_RANGE = 5,
  // A Rust panic was caught at the boundary.
  GRIDMPC_STATUS_INTERNAL = 6,
} GridmpcStatus;

// The per-instant record of one closed-loop run.
typedef struct GridmpcLog GridmpcLog;

// A case and its profiles.
typedef struct GridmpcScenario GridmpcScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next gridmpc call on the same thread.
const char *gridmpc_last_error(void);

// Library version as a static NUL-terminated string.
const char *gridmpc_version(void);

// Parses a MATPOWER (or JSON) case and a profile CSV.
//
// # Safety
// `case_text` and `profiles_text` must be NUL-terminated strings and `out`
// a valid pointer.
enum GridmpcStatus gridmpc_scenario_from_text(const char *case_text,
                                              const char *profiles_text,
                                              struct GridmpcScenario **out);

// Bundled IEEE grid with its day profile; `buses` is 30 or 57.
//
// # Safety
// `out` must be a valid pointer.
enum GridmpcStatus gridmpc_scenario_bundled(int buses, struct GridmpcScenario **out);

// # Safety
// `s` must come from a `gridmpc_scenario_*` constructor (or be null) and
// not be used afterwards.
void gridmpc_scenario_free(struct GridmpcScenario *s);

// Runs the closed loop with default settings, prediction error bound
// `eps` and `seed`. `mode` takes a [`GridmpcMode`] value.
//
// # Safety
// `scenario` must be a live handle and `out` a valid pointer.
enum GridmpcStatus gridmpc_simulate(const struct GridmpcScenario *scenario,
                                    int mode,
                                    double eps,
                                    uint64_t seed,
                                    struct GridmpcLog **out);

// # Safety
// `log` must come from [`gridmpc_simulate`] (or be null) and not be used
// afterwards.
void gridmpc_log_free(struct GridmpcLog *log);

// Instants in the run; 0 for a null handle.
//
// # Safety
// `log` must be a live handle or null.
size_t gridmpc_log_instants(const struct GridmpcLog *log);

// Buses per instant; 0 for a null handle.
//
// # Safety
// `log` must be a live handle or null.
size_t gridmpc_log_buses(const struct GridmpcLog *log);

// Voltage magnitude at instant `t` of the bus at position `bus` (buses in
// ascending case order).
//
// # Safety
// `log` must be a live handle and `out` a valid pointer.
enum GridmpcStatus gridmpc_log_voltage(const struct GridmpcLog *log,
                                       size_t t,
                                       size_t bus,
                                       double *out);

// Compensation in force at instant `t`.
//
// # Safety
// `log` must be a live handle and `out` a valid pointer.
enum GridmpcStatus gridmpc_log_control(const struct GridmpcLog *log,
                                       size_t t,
                                       size_t bus,
                                       double *out);

// Case bus number at position `bus`; 0 when out of range.
//
// # Safety
// `log` must be a live handle or null.
size_t gridmpc_log_bus_id(const struct GridmpcLog *log, size_t bus);

// Lowest voltage over the run; NaN for a null handle.
//
// # Safety
// `log` must be a live handle or null.
double gridmpc_log_min_voltage(const struct GridmpcLog *log);

// Highest voltage over the run; NaN for a null handle.
//
// # Safety
// `log` must be a live handle or null.
double gridmpc_log_max_voltage(const struct GridmpcLog *log);

// (instant, bus) pairs outside the voltage band.
//
// # Safety
// `log` must be a live handle or null.
size_t gridmpc_log_violations(const struct GridmpcLog *log);

// Instants where the controller kept the previous compensation.
//
// # Safety
// `log` must be a live handle or null.
size_t gridmpc_log_failures(const struct GridmpcLog *log);

// Runs the command-line tool in-process and returns its exit code
// (0 success, 1 invalid input, 2 runtime failure). `argv[0]` is the
// program name.
//
// # Safety
// `argv` must point to `argc` NUL-terminated strings.
int gridmpc_cli_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDMPC_H */
