#include <math.h>
#include <stdio.h>
#include "blackstart.h"

int main(void) {
    BsScenario *s = NULL;
    if (bs_scenario_load("paper-case", &s) != BS_OK) {
        fprintf(stderr, "load: %s\n", bs_last_error());
        return 1;
    }
    BsSizing r;
    if (bs_size(s, NAN, &r) != BS_OK || r.rating_mw != 3.0) {
        return 2;
    }
    BsRun *run = NULL;
    if (bs_run(s, BS_STRATEGY_WHCC, BS_TRIGGERS_SCRIPTED, 0.0, 0.0, &run) != BS_OK) {
        fprintf(stderr, "run: %s\n", bs_last_error());
        return 3;
    }
    BsSummary sum;
    bs_run_summary(run, &sum);
    if (!sum.complete || sum.final_step != 6) {
        return 4;
    }
    if (bs_scenario_parse("nonsense = [", &s) != BS_ERR_PARSE || bs_last_error() == NULL) {
        return 5;
    }
    printf("%.4f %.4f %zu\n", r.p_min_mw, sum.max_freq_dev_pct, sum.sample_count);
    bs_run_free(run);
    bs_scenario_free(s);
    return 0;
}
