#include <stdio.h>
#include "proxytest.h"

int main(void) {
    enum { N = 150 };
    double x[N], y[N], w[N];
    for (int i = 0; i < N; i++) {
        double u = (double)(i * 37 % 101) / 50.0 - 1.0;
        x[i] = u + (double)(i * 53 % 97) / 48.0 - 1.0;
        w[i] = u + 0.5 * ((double)(i * 29 % 89) / 44.0 - 1.0);
        y[i] = u + 0.5 * ((double)(i * 61 % 83) / 41.0 - 1.0);
    }
    PtDataset *data = NULL;
    PtConfig *cfg = NULL;
    PtReport *report = NULL;
    if (pt_dataset_new_continuous(x, y, w, N, &data) != PT_STATUS_OK) return 1;
    if (pt_config_new(PT_MODE_CONTINUOUS_SINGLE, &cfg) != PT_STATUS_OK) return 1;
    pt_config_set_replications(cfg, 99);
    pt_config_set_grid(cfg, 10, 3.0);
    if (pt_run_test(data, cfg, &report) != PT_STATUS_OK) {
        fprintf(stderr, "%s\n", pt_last_error());
        return 1;
    }
    double stat, crit, p;
    bool reject;
    pt_report_values(report, &stat, &crit, &p, &reject);
    printf("statistic=%g critical=%g p=%g reject=%d\n", stat, crit, p, reject);

    if (pt_config_set_alpha(cfg, 2.0) != PT_STATUS_INVALID_CONFIG) return 1;
    if (pt_last_error() == NULL) return 1;

    pt_report_free(report);
    pt_config_free(cfg);
    pt_dataset_free(data);
    return 0;
}
