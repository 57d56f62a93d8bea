#include <stdio.h>
#include <math.h>
#include "shapescale.h"

#define CHECK(call)                                                     \
    do {                                                                \
        SsStatus s_ = (call);                                           \
        if (s_ != SS_STATUS_OK) {                                       \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,           \
                    ss_last_error() ? ss_last_error() : "?");           \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(void) {
    /* three equidistant points: SC = 3^(3/2) */
    const double x[] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    SsDataset *ds = NULL;
    SsPairTable *t = NULL;
    CHECK(ss_dataset_from_values(x, 3, 3, &ds));
    CHECK(ss_pair_table_new(ds, 1, &t));
    const double alpha[] = {1, 1, 1};
    double sc = 0, grad[3];
    CHECK(ss_sc_gradient(t, alpha, 3, &sc, grad));
    if (fabs(sc - sqrt(27.0)) > 1e-12) {
        fprintf(stderr, "sc = %.17g\n", sc);
        return 1;
    }

    double u = 0;
    CHECK(ss_stirling_ratio(4, 2, &u));
    const size_t ref[] = {0, 0, 1, 1}, obt[] = {0, 1, 0, 1};
    double ari = 0;
    CHECK(ss_ari_fnc(ref, obt, 4, &ari));
    if (fabs(u - 3.0 / 7.0) > 1e-15 || fabs(ari + 0.4) > 1e-15) {
        fprintf(stderr, "u = %.17g, ari = %.17g\n", u, ari);
        return 1;
    }

    if (ss_stirling_ratio(2, 3, &u) != SS_STATUS_USAGE || ss_last_error() == NULL) {
        fprintf(stderr, "expected a usage error\n");
        return 1;
    }
    ss_pair_table_free(t);
    ss_dataset_free(ds);
    printf("ok\n");
    return 0;
}
