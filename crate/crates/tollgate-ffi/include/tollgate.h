#ifndef TOLLGATE_H
#define TOLLGATE_H

/* Generated by cbindgen from crates/tollgate-ffi. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call in this ABI.
 */
typedef enum {
  /**
   * The call succeeded.
   */
  TOLLGATE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TOLLGATE_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  TOLLGATE_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was understood but its value is out of range.
   */
  TOLLGATE_STATUS_INVALID_ARGUMENT = 3,
  /**
   * A named candidate, family, or prompt id is not known.
   */
  TOLLGATE_STATUS_NOT_FOUND = 4,
  /**
   * A file operation failed; the message carries the OS error.
   */
  TOLLGATE_STATUS_IO = 5,
  /**
   * An artifact file exists but cannot be decoded.
   */
  TOLLGATE_STATUS_BAD_ARTIFACT = 6,
  /**
   * Unexpected internal failure.
   */
  TOLLGATE_STATUS_INTERNAL = 7,
} TollgateStatus;

/**
 * A loaded routing engine: registry, estimator, encoder, and router
 * settings. Create with `tollgate_engine_new`, share freely across
 * threads for reads, free with `tollgate_engine_free`.
 */
typedef struct TollgateEngine TollgateEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Do not free.
 */
const char *tollgate_version(void);

/**
 * Message for the most recent failure on this thread, or null after a
 * success. Valid until the next tollgate call from the same thread; do
 * not free.
 */
const char *tollgate_last_error_message(void);

/**
 * Build an engine from a parameter artifact. `registry_path` and
 * `config_path` may be null to use the bundled registry and default
 * settings; a config file uses the same TOML schema as the CLI. On
 * success `*out_engine` owns the engine.
 *
 * # Safety
 * Path arguments must be null or NUL-terminated strings; `out_engine`
 * must point to writable storage for one pointer.
 */
TollgateStatus tollgate_engine_new(const char *params_path,
                                   const char *registry_path,
                                   const char *config_path,
                                   TollgateEngine **out_engine);

/**
 * Free an engine returned by `tollgate_engine_new`. Null is ignored.
 *
 * # Safety
 * `engine` must be null or a pointer this library returned, freed once.
 */
void tollgate_engine_free(TollgateEngine *engine);

/**
 * Route one prompt against the whole loaded family. Tolerance 0 asks
 * for maximum quality; 1 for minimum cost. On success `*out_response`
 * is the NUL-terminated wire response JSON; free it with
 * `tollgate_string_free`.
 *
 * # Safety
 * `engine` must be a live engine, `prompt` a NUL-terminated string,
 * and `out_response` writable storage for one pointer.
 */
TollgateStatus tollgate_route(const TollgateEngine *engine,
                              const char *prompt,
                              double tolerance,
                              char **out_response);

/**
 * Route one request given as wire JSON, the same document POST /route
 * accepts (prompt, tolerance, candidates, prompt_id, request_id). On
 * success `*out_response` is the wire response JSON; free it with
 * `tollgate_string_free`.
 *
 * # Safety
 * Same contract as `tollgate_route`, with `request_json` as the
 * NUL-terminated string argument.
 */
TollgateStatus tollgate_route_json(const TollgateEngine *engine,
                                   const char *request_json,
                                   char **out_response);

/**
 * Engine metadata as JSON (family, artifact versions, encoder id), the
 * same document GET /version serves. Free with `tollgate_string_free`.
 *
 * # Safety
 * `engine` must be a live engine and `out_info` writable storage for
 * one pointer.
 */
TollgateStatus tollgate_engine_info(const TollgateEngine *engine, char **out_info);

/**
 * Free a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string this library returned, freed once.
 */
void tollgate_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOLLGATE_H */
