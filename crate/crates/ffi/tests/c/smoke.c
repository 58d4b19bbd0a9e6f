#include <math.h>
#include <stdio.h>
#include "grkan.h"

#define CHECK(call)                                                              \
  do {                                                                           \
    GrkanStatus s_ = (call);                                                     \
    if (s_ != GRKAN_STATUS_OK) {                                                 \
      fprintf(stderr, "%s: %s (%s)\n", #call, grkan_status_name(s_),             \
              grkan_last_error_message());                                       \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  /* 2 groups over 4 channels, P = 1 + x, A = 0.5 x */
  const double num[] = {1.0, 1.0, 1.0, 1.0};
  const double den[] = {0.5, 0.5};
  GrkanRational *h = NULL;
  CHECK(grkan_rational_new(4, 2, 2, 1, num, den, &h));

  const double x[] = {0.0, 1.0, -2.0, 2.0, 0.5, -0.5, 3.0, -1.0};
  const double up[] = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  double y[8], dx[8], da[4], db[2], dx2[8], da2[4], db2[2];
  CHECK(grkan_rational_forward_f64(h, x, 2, 1, y));
  for (int i = 0; i < 8; i++) {
    double want = (1.0 + x[i]) / (1.0 + fabs(0.5 * x[i]));
    if (fabs(y[i] - want) > 1e-15) {
      fprintf(stderr, "forward mismatch at %d\n", i);
      return 1;
    }
  }
  CHECK(grkan_rational_backward_f64(h, x, up, 2, 1, GRKAN_STRATEGY_NAIVE_ATOMIC, 1, 0, dx, da, db));
  CHECK(grkan_rational_backward_f64(h, x, up, 2, 1, GRKAN_STRATEGY_BLOCKED_REDUCTION, 2, 1, dx2, da2, db2));
  for (int i = 0; i < 8; i++) {
    if (dx[i] != dx2[i]) return 1;
  }
  for (int i = 0; i < 4; i++) {
    if (fabs(da[i] - da2[i]) > 1e-12) return 1;
  }

  if (grkan_rational_forward_f64(h, NULL, 2, 1, y) != GRKAN_STATUS_NULL_POINTER) return 1;
  if (grkan_last_error_message() == NULL) return 1;

  uint64_t naive = 0, blocked = 0;
  CHECK(grkan_predict_accesses_naive(2, 4, 16, 10, &naive));
  CHECK(grkan_predict_accesses_blocked(2, 4, 16, 8, 8, 10, &blocked));
  if (naive != 4224 || blocked != 444) return 1;

  GrkanFlopsConfig cfg = {0};
  cfg.d_in = 192;
  cfg.d_out = 768;
  cfg.m = 5;
  cfg.n = 4;
  cfg.groups = 8;
  uint64_t params = 0, flops = 0;
  CHECK(grkan_flops(GRKAN_LAYER_KIND_GRKAN, &cfg, &params, &flops));
  if (flops != 298944 || params != 148261) return 1;

  grkan_rational_free(h);
  printf("ok\n");
  return 0;
}
