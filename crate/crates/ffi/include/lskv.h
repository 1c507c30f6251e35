#ifndef LSKV_H
#define LSKV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LskvStatus {
  LSKV_STATUS_OK = 0,
  LSKV_STATUS_NULL_ARGUMENT = 1,
  LSKV_STATUS_INVALID_UTF8 = 2,
  LSKV_STATUS_INVALID_ARGUMENT = 3,
  LSKV_STATUS_NOT_FOUND = 4,
  LSKV_STATUS_UNAVAILABLE = 5,
  LSKV_STATUS_IO = 6,
  LSKV_STATUS_CODEC = 7,
  /**
   * The server rejected the request; see [`lskv_last_error`].
   */
  LSKV_STATUS_REJECTED = 8,
  /**
   * Request and response do not hash to the receipt's claims.
   */
  LSKV_STATUS_CLAIMS_MISMATCH = 20,
  /**
   * The Merkle proof or root signature does not check out.
   */
  LSKV_STATUS_PROOF_OR_SIGNATURE_INVALID = 21,
  /**
   * The node certificate is not endorsed by the service.
   */
  LSKV_STATUS_UNTRUSTED_NODE = 22,
  /**
   * The response header names a different transaction than the receipt.
   */
  LSKV_STATUS_TX_ID_MISMATCH = 23,
  LSKV_STATUS_AUDIT_FAILED = 30,
  LSKV_STATUS_INTERNAL = 99,
} LskvStatus;

typedef enum LskvTxStatus {
  LSKV_TX_STATUS_UNKNOWN = 0,
  LSKV_TX_STATUS_PENDING = 1,
  LSKV_TX_STATUS_COMMITTED = 2,
  LSKV_TX_STATUS_INVALID = 3,
} LskvTxStatus;

/**
 * Result of a successful ledger audit.
 */
typedef struct LskvAudit LskvAudit;

/**
 * Blocking client bound to one node URL.
 */
typedef struct LskvClient LskvClient;

typedef struct LskvTxId {
  int64_t term;
  int64_t revision;
} LskvTxId;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lskv_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void lskv_string_free(char *s);

/**
 * # Safety
 * `data` and `len` must come from one call of this library that returned a
 * byte buffer, and the buffer must not have been freed.
 */
void lskv_bytes_free(uint8_t *data, uintptr_t len);

/**
 * Verify a receipt (JSON or YAML) against the request and response JSON the
 * caller holds and the service certificate PEM, without contacting any node.
 *
 * # Safety
 * All arguments must be valid NUL-terminated strings.
 */
enum LskvStatus lskv_receipt_verify(const char *receipt,
                                    const char *request_json,
                                    const char *response_json,
                                    const char *service_cert_pem);

/**
 * Audit ledger bytes. `secret` is NULL for a structure-only audit or points
 * at the 32-byte ledger secret to also check encrypted contents.
 *
 * # Safety
 * `data` must point to `len` readable bytes, `secret` to 32 bytes or NULL,
 * `service_cert_pem` must be a NUL-terminated string and `out` writable.
 */
enum LskvStatus lskv_ledger_audit(const uint8_t *data,
                                  uintptr_t len,
                                  const char *service_cert_pem,
                                  const uint8_t *secret,
                                  struct LskvAudit **out);

/**
 * # Safety
 * `audit` must be a live handle from [`lskv_ledger_audit`].
 */
uint64_t lskv_audit_transactions(const struct LskvAudit *audit);

/**
 * Last transaction covered by a signature entry.
 *
 * # Safety
 * `audit` must be a live handle from [`lskv_ledger_audit`].
 */
struct LskvTxId lskv_audit_covered(const struct LskvAudit *audit);

/**
 * Full report as JSON; free with [`lskv_string_free`].
 *
 * # Safety
 * `audit` must be a live handle from [`lskv_ledger_audit`].
 */
char *lskv_audit_to_json(const struct LskvAudit *audit);

/**
 * # Safety
 * `audit` must be NULL or a handle from [`lskv_ledger_audit`] not yet freed.
 */
void lskv_audit_free(struct LskvAudit *audit);

/**
 * Connect lazily to the node at `url`. `token` may be NULL.
 *
 * # Safety
 * `url` must be a NUL-terminated string, `token` NULL or one, and `out`
 * writable.
 */
enum LskvStatus lskv_client_new(const char *url, const char *token, struct LskvClient **out);

/**
 * # Safety
 * `client` must be NULL or a handle from [`lskv_client_new`] not yet freed.
 */
void lskv_client_free(struct LskvClient *client);

/**
 * Store `value` under `key`. On success `out_txid` (if not NULL) receives
 * the transaction ID to wait on or fetch a receipt for.
 *
 * # Safety
 * `client` must be live, `key`/`value` must point to the given number of
 * bytes and `out_txid` must be NULL or writable.
 */
enum LskvStatus lskv_client_put(const struct LskvClient *client,
                                const uint8_t *key,
                                uintptr_t key_len,
                                const uint8_t *value,
                                uintptr_t value_len,
                                struct LskvTxId *out_txid);

/**
 * Read the latest value of `key`. Returns [`LskvStatus::NotFound`] when
 * the key does not exist. The buffer is freed with [`lskv_bytes_free`].
 *
 * # Safety
 * `client` must be live, `key` must point to `key_len` bytes and both
 * output pointers must be writable.
 */
enum LskvStatus lskv_client_get(const struct LskvClient *client,
                                const uint8_t *key,
                                uintptr_t key_len,
                                uint8_t **out_value,
                                uintptr_t *out_len);

/**
 * Delete `key`; `out_deleted` (if not NULL) receives the number of keys removed.
 *
 * # Safety
 * `client` must be live, `key` must point to `key_len` bytes and
 * `out_deleted` must be NULL or writable.
 */
enum LskvStatus lskv_client_delete(const struct LskvClient *client,
                                   const uint8_t *key,
                                   uintptr_t key_len,
                                   int64_t *out_deleted);

/**
 * # Safety
 * `client` must be live and `out_status` writable.
 */
enum LskvStatus lskv_client_tx_status(const struct LskvClient *client,
                                      struct LskvTxId txid,
                                      enum LskvTxStatus *out_status);

/**
 * Fetch the receipt for a committed transaction as JSON; free with
 * [`lskv_string_free`].
 *
 * # Safety
 * `client` must be live and `out_json` writable.
 */
enum LskvStatus lskv_client_receipt(const struct LskvClient *client,
                                    struct LskvTxId txid,
                                    char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSKV_H */
