/* Links against libkevlar_ffi.a; exercises the cache, crypto and base64 calls. */
#include <stdio.h>
#include <string.h>

#include "kevlar.h"

#define CHECK(expr)                                                             \
    do {                                                                        \
        KevlarStatus st_ = (expr);                                              \
        if (st_ != KEVLAR_STATUS_OK) {                                          \
            const char *msg_ = kevlar_last_error_message();                     \
            fprintf(stderr, "%s:%d %s: %s\n", __FILE__, __LINE__,               \
                    kevlar_status_str(st_), msg_ ? msg_ : "");                  \
            return 1;                                                           \
        }                                                                       \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s STORE_DIR KEYFILE\n", argv[0]);
        return 2;
    }

    KevlarCache *cache = NULL;
    CHECK(kevlar_cache_open(argv[1], argv[2], 4, 8, 32, 256, KEVLAR_POLICY_LRU, &cache));

    const char *id = "sensor-1";
    const char *val = "hello sealed world";
    CHECK(kevlar_cache_save(cache, (const uint8_t *)id, strlen(id), (const uint8_t *)val, strlen(val)));

    KevlarBuffer got = {0};
    CHECK(kevlar_cache_query(cache, (const uint8_t *)id, strlen(id), &got));
    if (got.len != strlen(val) || memcmp(got.data, val, got.len) != 0) {
        fprintf(stderr, "query mismatch\n");
        return 1;
    }
    kevlar_buffer_free(&got);

    KevlarBuffer missing = {0};
    if (kevlar_cache_query(cache, (const uint8_t *)"nope", 4, &missing) != KEVLAR_STATUS_NOT_FOUND) {
        fprintf(stderr, "expected NOT_FOUND\n");
        return 1;
    }

    KevlarStats stats;
    CHECK(kevlar_cache_stats(cache, &stats));
    kevlar_cache_free(cache);

    uint8_t k1[32], k2[32];
    memset(k1, 0x11, sizeof k1);
    memset(k2, 0x22, sizeof k2);
    KevlarBuffer c1 = {0}, c2 = {0}, plain = {0}, b64 = {0};
    CHECK(kevlar_encrypt(k1, (const uint8_t *)val, strlen(val), &c1));
    CHECK(kevlar_reencrypt(k1, k2, c1.data, c1.len, &c2));
    CHECK(kevlar_decrypt(k2, c2.data, c2.len, &plain));
    if (plain.len != strlen(val) || memcmp(plain.data, val, plain.len) != 0) {
        fprintf(stderr, "reencrypt mismatch\n");
        return 1;
    }
    CHECK(kevlar_base64_encode((const uint8_t *)"foobar", 6, &b64));
    if (b64.len != 8 || memcmp(b64.data, "Zm9vYmFy", 8) != 0) {
        fprintf(stderr, "base64 mismatch\n");
        return 1;
    }
    kevlar_buffer_free(&c1);
    kevlar_buffer_free(&c2);
    kevlar_buffer_free(&plain);
    kevlar_buffer_free(&b64);

    printf("ok saves=%llu hits=%llu not_found=%llu\n", (unsigned long long)stats.saves,
           (unsigned long long)stats.hits, (unsigned long long)stats.not_found);
    return 0;
}
