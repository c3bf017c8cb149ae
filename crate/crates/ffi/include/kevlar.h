#ifndef KEVLAR_H
#define KEVLAR_H

/* Generated by cbindgen from crates/ffi. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum KevlarStatus {
  KEVLAR_STATUS_OK = 0,
  KEVLAR_STATUS_NOT_FOUND = 1,
  KEVLAR_STATUS_BAD_REQUEST = 2,
  KEVLAR_STATUS_CRYPTO_FAIL = 3,
  KEVLAR_STATUS_STORE_FAIL = 4,
  KEVLAR_STATUS_TOO_LARGE = 5,
  KEVLAR_STATUS_INVALID_ARGUMENT = 6,
  KEVLAR_STATUS_INTEGRITY_FAILURE = 7,
  KEVLAR_STATUS_PANIC = 8,
} KevlarStatus;

typedef enum KevlarPolicy {
  KEVLAR_POLICY_LRU = 0,
  KEVLAR_POLICY_FIFO = 1,
} KevlarPolicy;

/**
 * Opaque cache handle.
 */
typedef struct KevlarCache KevlarCache;

/**
 * Heap bytes handed to C. Free with [`kevlar_buffer_free`].
 */
typedef struct KevlarBuffer {
  uint8_t *data;
  size_t len;
} KevlarBuffer;

typedef struct KevlarStats {
  uint64_t hits;
  uint64_t misses;
  uint64_t not_found;
  uint64_t store_failures;
  uint64_t evictions;
  uint64_t saves;
  uint64_t resident;
} KevlarStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated name of a status code.
 */
const char *kevlar_status_str(enum KevlarStatus status);

/**
 * Message of the last failure on this thread, or NULL. Valid until the next
 * failing call on the same thread.
 */
const char *kevlar_last_error_message(void);

/**
 * Opens the sealed store at `store_dir` (keyfile created if missing) and
 * builds an empty cache over it.
 *
 * # Safety
 * `store_dir` and `keyfile` must be NUL-terminated strings; `out` must be
 * writable.
 */
enum KevlarStatus kevlar_cache_open(const char *store_dir,
                                    const char *keyfile,
                                    size_t capacity,
                                    size_t bucket_count,
                                    size_t id_size,
                                    size_t value_size,
                                    int policy,
                                    struct KevlarCache **out);

/**
 * Releases the volatile cache. Stored objects are untouched. NULL is a no-op.
 *
 * # Safety
 * `cache` must come from [`kevlar_cache_open`] and not be used afterwards.
 */
void kevlar_cache_free(struct KevlarCache *cache);

/**
 * # Safety
 * `cache` must be a live handle, `id` must point to `id_len` bytes and `out`
 * must be writable.
 */
enum KevlarStatus kevlar_cache_query(struct KevlarCache *cache,
                                     const uint8_t *id,
                                     size_t id_len,
                                     struct KevlarBuffer *out);

/**
 * Writes through to the store, then caches the pair.
 *
 * # Safety
 * `cache` must be a live handle; `id` and `value` must point to `id_len` and
 * `value_len` bytes.
 */
enum KevlarStatus kevlar_cache_save(struct KevlarCache *cache,
                                    const uint8_t *id,
                                    size_t id_len,
                                    const uint8_t *value,
                                    size_t value_len);

/**
 * # Safety
 * `cache` must be a live handle and `out` writable.
 */
enum KevlarStatus kevlar_cache_stats(const struct KevlarCache *cache, struct KevlarStats *out);

/**
 * Releases a buffer's bytes and zeroes the struct. Safe to call twice.
 *
 * # Safety
 * `buf` must be NULL or point to a buffer filled by this library.
 */
void kevlar_buffer_free(struct KevlarBuffer *buf);

/**
 * AES-256-CBC/PKCS#7 under a 32-byte key. Output is `iv || body`.
 *
 * # Safety
 * `key` must point to 32 bytes, `plaintext` to `len` bytes; `out` writable.
 */
enum KevlarStatus kevlar_encrypt(const uint8_t *key,
                                 const uint8_t *plaintext,
                                 size_t len,
                                 struct KevlarBuffer *out);

/**
 * # Safety
 * `key` must point to 32 bytes, `cipher` to `len` bytes; `out` writable.
 */
enum KevlarStatus kevlar_decrypt(const uint8_t *key,
                                 const uint8_t *cipher,
                                 size_t len,
                                 struct KevlarBuffer *out);

/**
 * Moves `cipher` from `key_from` to `key_to` with a fresh IV.
 *
 * # Safety
 * Both keys must point to 32 bytes, `cipher` to `len` bytes; `out` writable.
 */
enum KevlarStatus kevlar_reencrypt(const uint8_t *key_from,
                                   const uint8_t *key_to,
                                   const uint8_t *cipher,
                                   size_t len,
                                   struct KevlarBuffer *out);

/**
 * Standard padded base64 (no NUL terminator in the output).
 *
 * # Safety
 * `data` must point to `len` bytes; `out` writable.
 */
enum KevlarStatus kevlar_base64_encode(const uint8_t *data, size_t len, struct KevlarBuffer *out);

/**
 * Strict decode; non-canonical input yields `KEVLAR_STATUS_BAD_REQUEST`.
 *
 * # Safety
 * `text` must point to `len` bytes; `out` writable.
 */
enum KevlarStatus kevlar_base64_decode(const uint8_t *text, size_t len, struct KevlarBuffer *out);

/**
 * # Safety
 * `text` must point to `len` bytes; `out` writable.
 */
enum KevlarStatus kevlar_base64_decode_length(const uint8_t *text, size_t len, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KEVLAR_H */
