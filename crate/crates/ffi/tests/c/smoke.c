#include <math.h>
#include <stdio.h>

#include "ifssl.h"

#define CHECK(call)                                                  \
    do {                                                             \
        IfsslStatus s_ = (call);                                     \
        if (s_ != IFSSL_STATUS_OK) {                                 \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,        \
                    ifssl_last_error());                             \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(void) {
    IfsslConfig *cfg = NULL;
    CHECK(ifssl_config_new(&cfg));
    CHECK(ifssl_config_set(cfg, "mode", "if-ssl"));
    CHECK(ifssl_config_set(cfg, "n-per-class", "40"));
    CHECK(ifssl_config_set(cfg, "patience", "5"));
    CHECK(ifssl_config_set(cfg, "max-epochs", "5"));
    if (ifssl_config_set(cfg, "bogus", "1") != IFSSL_STATUS_CONFIG) return 2;

    IfsslRun *run = NULL;
    CHECK(ifssl_run(cfg, 3, NULL, &run));
    IfsslRunSummary sum;
    CHECK(ifssl_run_summary(run, &sum));
    if (sum.seed != 3 || isnan(sum.test_acc) || sum.epochs_total == 0) return 3;

    double x[4] = {0.0, 0.0, 1.0, -1.0};
    size_t labels[2] = {99, 99};
    CHECK(ifssl_run_predict(run, x, 2, 2, labels));
    if (labels[0] >= 4 || labels[1] >= 4) return 4;

    printf("ok %s %.3f\n", ifssl_version(), sum.test_acc);
    ifssl_run_free(run);
    ifssl_config_free(cfg);
    return 0;
}
