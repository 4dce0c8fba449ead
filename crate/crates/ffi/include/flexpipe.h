#ifndef FLEXPIPE_H
#define FLEXPIPE_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  FP_FORMAT_CSV = 0,
  FP_FORMAT_JSON = 1,
} FpFormat;

typedef enum {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_ARGUMENT = 1,
  FP_STATUS_INVALID_UTF8 = 2,
  /**
   * Recipe is not valid YAML or does not match the schema.
   */
  FP_STATUS_PARSE = 3,
  /**
   * Recipe parsed but violates a rule; see the error message.
   */
  FP_STATUS_VALIDATION = 4,
  /**
   * Deployment or transport failure.
   */
  FP_STATUS_DEPLOY = 5,
  /**
   * Invalid argument value.
   */
  FP_STATUS_ARGUMENT = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  FP_STATUS_PANIC = 7,
} FpStatus;

/**
 * A deployment daemon serving on a background thread.
 */
typedef struct FpDaemon FpDaemon;

/**
 * A running pipeline and its metrics collector.
 */
typedef struct FpPipeline FpPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *fp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fp_version(void);

/**
 * Parses and validates a YAML recipe against the built-in kernels.
 *
 * # Safety
 * `recipe_yaml` must be a NUL-terminated string.
 */
FpStatus fp_validate_recipe(const char *recipe_yaml);

/**
 * Deploys and starts a recipe. `servers` maps placement labels to daemon
 * addresses as `name=host:port;...` and may be null for local recipes.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
FpStatus fp_pipeline_deploy(const char *recipe_yaml, const char *servers, FpPipeline **out);

/**
 * Number of kernel instances across all hosts.
 *
 * # Safety
 * `p` is a live pipeline handle; `out` is writable.
 */
FpStatus fp_pipeline_kernel_count(const FpPipeline *p, size_t *out);

/**
 * Messages that reached sinks on this process so far.
 *
 * # Safety
 * `p` is a live pipeline handle; `out` is writable.
 */
FpStatus fp_pipeline_sink_count(FpPipeline *p, uint64_t *out);

/**
 * Whether every kernel on this process has exited on its own.
 *
 * # Safety
 * `p` is a live pipeline handle; `out` is writable.
 */
FpStatus fp_pipeline_is_finished(FpPipeline *p, bool *out);

/**
 * Stops the pipeline on every host. Idempotent.
 *
 * # Safety
 * `p` is a live pipeline handle.
 */
FpStatus fp_pipeline_stop(FpPipeline *p);

/**
 * Stops (if needed) and releases a pipeline. Null is ignored.
 *
 * # Safety
 * `p` is null or a handle from [`fp_pipeline_deploy`] not yet freed.
 */
void fp_pipeline_free(FpPipeline *p);

/**
 * Starts a daemon on `bind` (`host:port`, port 0 for any free port).
 *
 * # Safety
 * `bind` is NUL-terminated; `out` is writable.
 */
FpStatus fp_daemon_start(const char *bind, FpDaemon **out);

/**
 * The port the daemon listens on.
 *
 * # Safety
 * `d` is a live daemon handle; `out` is writable.
 */
FpStatus fp_daemon_port(const FpDaemon *d, uint16_t *out);

/**
 * Stops the daemon and every pipeline it hosts, then releases it.
 *
 * # Safety
 * `d` is null or a handle from [`fp_daemon_start`] not yet freed.
 */
void fp_daemon_free(FpDaemon *d);

/**
 * Runs a benchmark and returns the report text in `out_report`, to be
 * released with [`fp_string_free`].
 *
 * # Safety
 * String arguments are NUL-terminated (`servers` may be null);
 * `out_report` is writable.
 */
FpStatus fp_bench(const char *recipe_yaml,
                  const char *servers,
                  double duration_s,
                  double warmup_s,
                  FpFormat format,
                  char **out_report);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or a string from this library not yet freed.
 */
void fp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXPIPE_H */
