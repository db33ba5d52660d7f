#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "fracsde.h"

#define CHECK(call)                                                            \
  do {                                                                         \
    FracsdeStatus s_ = (call);                                                 \
    if (s_ != FRACSDE_STATUS_OK) {                                             \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_,                  \
              fracsde_last_error_message());                                   \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(void) {
  double sigma3 = 0.0;
  CHECK(fracsde_sigma_qh(3, 0.5, &sigma3));
  if (fabs(sigma3 - sqrt(6.0)) > 1e-9) return 2;

  FracsdeModel *model = NULL;
  CHECK(fracsde_model_new("constant", "{\"theta\": 0.5, \"c\": 2.0}", &model));
  FracsdePath *path = NULL;
  CHECK(fracsde_fbm_sample(8, 0.6, 7, 0, &path));
  CHECK(fracsde_path_set_level(path, 6));

  size_t n = 0;
  CHECK(fracsde_path_len(path, &n));
  double *b = malloc(n * sizeof(double));
  CHECK(fracsde_path_values(path, b, n));

  size_t nc = (1u << 6) + 1;
  double *x = malloc(nc * sizeof(double));
  bool frozen = true;
  CHECK(fracsde_scheme_run(FRACSDE_SCHEME_CRANK_NICOLSON, model, 1.0, path, x, nc, &frozen));
  /* Constant coefficients: every scheme is exact. */
  for (size_t k = 0; k < nc; ++k) {
    double t = (double)k / (double)(nc - 1);
    double exact = 1.0 + 0.5 * t + 2.0 * b[k * 4];
    if (fabs(x[k] - exact) > 1e-12) return 3;
  }
  if (frozen) return 4;

  if (fracsde_model_new("nope", NULL, &model) != FRACSDE_STATUS_CONFIG) return 5;
  if (fracsde_last_error_message() == NULL) return 6;

  free(b);
  free(x);
  fracsde_path_free(path);
  fracsde_model_free(model);
  printf("ok\n");
  return 0;
}
