#ifndef MOVIEBENCH_H
#define MOVIEBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Kind of an RPC message.
 */
typedef enum MbMessageKind {
  MB_MESSAGE_KIND_REQUEST = 0,
  MB_MESSAGE_KIND_RESPONSE = 1,
  MB_MESSAGE_KIND_ERROR = 2,
} MbMessageKind;

/*
 Result codes. Zero is success.
 */
typedef enum MbStatus {
  MB_STATUS_OK = 0,
  MB_STATUS_NULL_ARGUMENT = 1,
  MB_STATUS_INVALID_UTF8 = 2,
  MB_STATUS_WIRE = 3,
  MB_STATUS_HISTOGRAM = 4,
  MB_STATUS_TOPOLOGY_PARSE = 5,
  MB_STATUS_TOPOLOGY_INVALID = 6,
  MB_STATUS_IO = 7,
  MB_STATUS_ANALYSIS = 8,
  MB_STATUS_INVALID_ARGUMENT = 9,
  MB_STATUS_PANIC = 10,
} MbStatus;

typedef struct MbHistogram MbHistogram;

typedef struct MbMessage MbMessage;

typedef struct MbTopology MbTopology;

/*
 Byte buffer owned by the caller once returned.
 */
typedef struct MbBytes {
  uint8_t *data;
  size_t len;
} MbBytes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *mb_last_error(void);

/*
 Library version as a static string.
 */
const char *mb_version(void);

/*
 # Safety
 `bytes` must come from this library and not have been freed.
 */
void mb_bytes_free(struct MbBytes bytes);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void mb_string_free(char *s);

/*
 # Safety
 `out` must be a valid pointer.
 */
enum MbStatus mb_histogram_new(struct MbHistogram **out);

/*
 # Safety
 `h` must be NULL or a live handle.
 */
void mb_histogram_free(struct MbHistogram *h);

/*
 # Safety
 `h` must be a live handle.
 */
enum MbStatus mb_histogram_record(struct MbHistogram *h, uint64_t ns);

/*
 Number of recorded samples; 0 for NULL.

 # Safety
 `h` must be NULL or a live handle.
 */
uint64_t mb_histogram_count(const struct MbHistogram *h);

/*
 # Safety
 `h` must be a live handle and `out` a valid pointer.
 */
enum MbStatus mb_histogram_percentile(const struct MbHistogram *h, double q, uint64_t *out);

/*
 Adds every sample of `src` to `dst`.

 # Safety
 Both must be live handles.
 */
enum MbStatus mb_histogram_merge(struct MbHistogram *dst, const struct MbHistogram *src);

/*
 New request with the given trace context and method.

 # Safety
 `method` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MbStatus mb_message_new_request(uint64_t trace_id_hi,
                                     uint64_t trace_id_lo,
                                     uint64_t span_id,
                                     uint64_t parent_span_id,
                                     const char *method,
                                     struct MbMessage **out);

/*
 # Safety
 `m` must be NULL or a live handle.
 */
void mb_message_free(struct MbMessage *m);

/*
 Appends a field. Tag uniqueness is checked when encoding.

 # Safety
 `m` must be a live handle; `value` must point to `len` bytes (or be NULL with `len` 0).
 */
enum MbStatus mb_message_add_field(struct MbMessage *m,
                                   uint8_t tag,
                                   const uint8_t *value,
                                   size_t len);

/*
 Encodes a full frame, length prefix included.

 # Safety
 `m` must be a live handle and `out` a valid pointer.
 */
enum MbStatus mb_message_encode(const struct MbMessage *m, struct MbBytes *out);

/*
 Decodes one full frame.

 # Safety
 `frame` must point to `len` bytes and `out` must be a valid pointer.
 */
enum MbStatus mb_message_decode(const uint8_t *frame, size_t len, struct MbMessage **out);

/*
 Method name, valid while the message lives. NULL for NULL.

 # Safety
 `m` must be NULL or a live handle.
 */
const char *mb_message_method(const struct MbMessage *m);

/*
 # Safety
 `m` must be a live handle.
 */
enum MbMessageKind mb_message_kind(const struct MbMessage *m);

/*
 Span id of the message's trace context.

 # Safety
 `m` must be a live handle.
 */
uint64_t mb_message_span_id(const struct MbMessage *m);

/*
 # Safety
 `m` must be a live handle.
 */
size_t mb_message_field_count(const struct MbMessage *m);

/*
 Borrows the value of field `tag`. The pointer stays valid while the
 message lives and is not modified. Returns `InvalidArgument` when absent.

 # Safety
 `m` must be a live handle; `data` and `len` valid pointers.
 */
enum MbStatus mb_message_field(const struct MbMessage *m,
                               uint8_t tag,
                               const uint8_t **data,
                               size_t *len);

/*
 Parses topology text. Syntax errors are reported together.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MbStatus mb_topology_parse(const char *text, struct MbTopology **out);

/*
 # Safety
 `t` must be NULL or a live handle.
 */
void mb_topology_free(struct MbTopology *t);

/*
 # Safety
 `t` must be a live handle.
 */
size_t mb_topology_service_count(const struct MbTopology *t);

/*
 Checks structural rules. `violations` (optional) receives their number;
 on `TopologyInvalid` the last error lists them.

 # Safety
 `t` must be a live handle; `violations` NULL or valid.
 */
enum MbStatus mb_topology_validate(const struct MbTopology *t, size_t *violations);

/*
 Per-service breakdown CSV of a span log. `operations` is an optional
 comma-separated list of root operations to keep.

 # Safety
 `path` must be a NUL-terminated string, `operations` NULL or one, and
 `out` a valid pointer. Free the result with [`mb_string_free`].
 */
enum MbStatus mb_breakdown_csv(const char *path,
                               const char *operations,
                               bool total_time,
                               char **out);

/*
 Network / compute / wait split CSV of a span log.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer. Free
 the result with [`mb_string_free`].
 */
enum MbStatus mb_split_csv(const char *path, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOVIEBENCH_H */
