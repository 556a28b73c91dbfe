#ifndef BLACKSTART_H
#define BLACKSTART_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BS_STRATEGY_WHCC 0

#define BS_STRATEGY_HSCC 1

#define BS_TRIGGERS_SCENARIO 0

#define BS_TRIGGERS_CONDITION 1

#define BS_TRIGGERS_SCRIPTED 2

/**
 * The recorded output of one simulation run.
 */
typedef struct BsRun BsRun;

/**
 * A parsed scenario file.
 */
typedef struct BsScenario BsScenario;

typedef uint32_t BsStatus;

typedef struct BsSizing {
  double p_min_mw;
  double q_min_mvar;
  double s_min_mva;
  double rating_mw;
  double loss_p_mw;
  double loss_q_mvar;
  double transformer_excitation_mvar;
  double line_charging_mvar;
  double lsc_standby_mw;
  uint32_t iterations;
} BsSizing;

typedef struct BsSummary {
  bool complete;
  uint8_t final_step;
  /**
   * Time of step 6, or a negative value if the run did not complete.
   */
  double completion_time;
  double max_freq_dev_hz;
  double max_freq_dev_pct;
  double peak_pemfc_p_mw;
  double peak_pemfc_q_mvar;
  double pemfc_energy_kwh;
  size_t sample_count;
} BsSummary;

/**
 * One recorded sample without the per-bus voltages.
 */
typedef struct BsSample {
  double t;
  uint8_t step;
  double f_hz;
  double v_dc;
  double pemfc_p;
  double pemfc_q;
  double dfig_p;
  double dfig_q;
  double lsc_p;
  double elz_p;
  double aux_p;
  double aux_q;
  double loss_p;
  double loss_q;
} BsSample;

#define BS_OK 0

#define BS_ERR_IO 1

#define BS_ERR_ARGUMENT 2

#define BS_ERR_PARSE 3

#define BS_ERR_NONCONVERGENCE 4

#define BS_ERR_TIMEOUT 5

#define BS_ERR_FAULT 6

#define BS_ERR_PANIC 7

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on this thread.
 */
const char *bs_last_error(void);

/**
 * Loads a scenario from a TOML file; `"paper-case"` selects the built-in case.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
BsStatus bs_scenario_load(const char *path, struct BsScenario **out);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
BsStatus bs_scenario_parse(const char *text, struct BsScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library not yet freed.
 */
void bs_scenario_free(struct BsScenario *scenario);

/**
 * Sizes the black-start source. A NaN `margin` keeps the scenario's own.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
BsStatus bs_size(const struct BsScenario *scenario, double margin, struct BsSizing *out);

/**
 * Simulates the restoration sequence. Non-positive `dt` or `t_end` keep
 * the scenario values. When the run faults after starting, `*out` still
 * receives the output recorded up to the fault.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
BsStatus bs_run(const struct BsScenario *scenario,
                uint32_t strategy,
                uint32_t triggers,
                double dt,
                double t_end,
                struct BsRun **out);

/**
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
BsStatus bs_run_summary(const struct BsRun *run, struct BsSummary *out);

/**
 * Copies sample `index` into `out`.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
BsStatus bs_run_sample(const struct BsRun *run, size_t index, struct BsSample *out);

/**
 * Writes timeseries.csv, events.jsonl and summary.json into `dir`.
 *
 * # Safety
 * `run` must be a live handle and `dir` a NUL-terminated string.
 */
BsStatus bs_run_write(const struct BsRun *run, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle from this library not yet freed.
 */
void bs_run_free(struct BsRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLACKSTART_H */
