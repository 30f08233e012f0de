/* Build: cc -Icrates/ffi/include crates/ffi/examples/smoke.c -Ltarget/debug -ladars_ffi -o smoke */
#include <stdio.h>
#include "adars.h"

int main(void) {
    double r, p;
    if (adars_alp_reward(true, 4, 0.5, 0.1, &r) != ADARS_STATUS_OK) return 1;
    if (adars_pairwise_accept_prob(0.2, 0.5, 0.0, &p) != ADARS_STATUS_INVALID_ARGUMENT) return 2;
    printf("adars %s: reward=%.4f, error=\"%s\"\n", adars_version(), r, adars_last_error_message());

    AdarsPolicy *policy = NULL;
    const char *cfg = "[experiment]\neval_mode = \"exact\"\n";
    if (adars_policy_base(cfg, &policy) != ADARS_STATUS_OK) return 3;
    AdarsEvalSummary s;
    if (adars_policy_evaluate(policy, 50, ADARS_GATE_THINK_OFF, &s) != ADARS_STATUS_OK) return 4;
    printf("think-off accuracy=%.4f tokens=%.2f\n", s.accuracy, s.avg_output_tokens);
    adars_policy_free(policy);
    return 0;
}
