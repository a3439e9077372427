#ifndef FOCUS_H
#define FOCUS_H

/* Generated by cbindgen from focus-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call. Zero is success.
 */
typedef enum {
  FocusStatus_Ok = 0,
  FocusStatus_NullPointer = 1,
  FocusStatus_InvalidUtf8 = 2,
  FocusStatus_UnknownSchema = 3,
  FocusStatus_UnknownField = 4,
  FocusStatus_KeyAbsent = 5,
  FocusStatus_DuplicateSchema = 6,
  FocusStatus_InvalidSchema = 7,
  FocusStatus_SizeMismatch = 8,
  FocusStatus_CapacityExhausted = 9,
  FocusStatus_RowTooLarge = 10,
  FocusStatus_Corrupt = 11,
  FocusStatus_Io = 12,
  FocusStatus_Config = 13,
  FocusStatus_Internal = 14,
} FocusStatus;

/**
 * Opaque database handle.
 */
typedef struct FocusDb FocusDb;

/**
 * Open options. Zeroed fields fall back to defaults; `config_path` may be
 * null or point to a `key = value` config file.
 */
typedef struct {
  uint64_t capacity_bytes;
  uint64_t cache_capacity_bytes;
  uint32_t restore_threshold;
  /**
   * 0 = no background worker (caller drives maintenance), 1 = spawn one.
   */
  uint8_t background;
  const char *config_path;
} FocusOptions;

/**
 * One field of a schema definition: name, kind (0 fixed / 1 variable), and
 * the byte size for fixed fields.
 */
typedef struct {
  const char *name;
  uint8_t kind;
  uint32_t size;
} FocusFieldDef;

/**
 * One field value owned by the library.
 */
typedef struct {
  uint16_t field_id;
  uint8_t *ptr;
  uintptr_t len;
} FocusOwnedField;

/**
 * A set of field values owned by the library; release with
 * `focus_values_free`.
 */
typedef struct {
  FocusOwnedField *fields;
  uintptr_t len;
} FocusOwnedValues;

/**
 * Borrowed byte slice passed into the API.
 */
typedef struct {
  const uint8_t *ptr;
  uintptr_t len;
} FocusSlice;

/**
 * One scanned row: primary key plus its field values.
 */
typedef struct {
  uint8_t *key_ptr;
  uintptr_t key_len;
  FocusOwnedValues values;
} FocusOwnedRow;

/**
 * Scan results owned by the library; release with `focus_rows_free`.
 */
typedef struct {
  FocusOwnedRow *rows;
  uintptr_t len;
} FocusOwnedRows;

/**
 * Backend and cache counters.
 */
typedef struct {
  uint64_t bytes_read;
  uint64_t bytes_written;
  uint64_t cacheline_flushes;
  uint64_t fences;
  uint64_t cache_hits;
  uint64_t cache_misses;
  uint64_t index_probes;
} FocusStats;

/**
 * Human-readable description of a status code; static storage.
 */
const char *focus_status_message(FocusStatus status);

/**
 * Fills `out` with default options.
 *
 * # Safety
 * `out` must point to writable memory for one `FocusOptions`.
 */
FocusStatus focus_options_default(FocusOptions *out);

/**
 * Opens a database and writes the handle to `out_db`.
 *
 * # Safety
 * `options` may be null (defaults). `out_db` must be a valid pointer. Any
 * `config_path` must be a NUL-terminated string.
 */
FocusStatus focus_open(const FocusOptions *options, FocusDb **out_db);

/**
 * Closes a handle opened by `focus_open`; null is a no-op.
 *
 * # Safety
 * `db` must have come from `focus_open` and not been closed before.
 */
void focus_close(FocusDb *db);

/**
 * Registers a schema; writes the fresh schema id to `out_schema_id`.
 *
 * # Safety
 * `name` must be NUL-terminated; `fields` must point to `field_count`
 * valid definitions with NUL-terminated names.
 */
FocusStatus focus_schema_create(FocusDb *db,
                                const char *name,
                                const FocusFieldDef *fields,
                                uintptr_t field_count,
                                uint32_t *out_schema_id);

/**
 * Releases buffers returned by `focus_get`.
 *
 * # Safety
 * `values` must have been produced by this library and not freed before.
 */
void focus_values_free(FocusOwnedValues *values);

/**
 * Inserts or overwrites a record. `values` holds one slice per field, in
 * field-id order.
 *
 * # Safety
 * All slices must reference `len` readable bytes.
 */
FocusStatus focus_put(FocusDb *db,
                      uint32_t schema_id,
                      FocusSlice key,
                      const FocusSlice *values,
                      uintptr_t value_count);

/**
 * Updates the given fields of an existing record.
 *
 * # Safety
 * `field_ids` and `values` must each hold `count` valid entries.
 */
FocusStatus focus_update(FocusDb *db,
                         uint32_t schema_id,
                         FocusSlice key,
                         const uint16_t *field_ids,
                         const FocusSlice *values,
                         uintptr_t count);

/**
 * Reads fields of a record. `field_count == 0` reads every field.
 *
 * # Safety
 * `out_values` must be valid; `field_ids` must hold `field_count` entries
 * when non-zero.
 */
FocusStatus focus_get(FocusDb *db,
                      uint32_t schema_id,
                      FocusSlice key,
                      const uint16_t *field_ids,
                      uintptr_t field_count,
                      FocusOwnedValues *out_values);

/**
 * Deletes a record; succeeds whether or not the key exists.
 *
 * # Safety
 * `key` must reference readable bytes.
 */
FocusStatus focus_del(FocusDb *db, uint32_t schema_id, FocusSlice key);

/**
 * Key-ordered scan of up to `limit` records starting at `start_key`.
 * `field_count == 0` reads every field.
 *
 * # Safety
 * Pointer arguments must be valid as for `focus_get`.
 */
FocusStatus focus_scan(FocusDb *db,
                       uint32_t schema_id,
                       FocusSlice start_key,
                       const uint16_t *field_ids,
                       uintptr_t field_count,
                       uintptr_t limit,
                       FocusOwnedRows *out_rows);

/**
 * Releases buffers returned by `focus_scan`.
 *
 * # Safety
 * `rows` must have been produced by this library and not freed before.
 */
void focus_rows_free(FocusOwnedRows *rows);

/**
 * Snapshots engine counters into `out`.
 *
 * # Safety
 * `out` must point to writable memory for one `FocusStats`.
 */
FocusStatus focus_stats(FocusDb *db, FocusStats *out);

/**
 * Runs one round of background maintenance on the calling thread; useful
 * when the handle was opened with `background = 0`.
 *
 * # Safety
 * `db` must be a live handle.
 */
FocusStatus focus_maintenance(FocusDb *db);

#endif  /* FOCUS_H */
