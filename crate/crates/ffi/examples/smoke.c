#include <stdio.h>
#include <string.h>
#include "xfernas.h"

int main(void) {
    XfnSuite *suite = NULL;
    XfnGenome *genome = NULL;
    double score = -1.0;
    char fp[33];

    if (xfn_suite_new(42, 5, 0.3, 0.01, 5, &suite) != XFN_STATUS_OK) return 1;
    if (xfn_genome_sample(3, 5, &genome) != XFN_STATUS_OK) return 2;
    if (xfn_suite_evaluate(suite, "task_4", genome, &score) != XFN_STATUS_OK) return 3;
    if (xfn_genome_fingerprint(genome, fp, sizeof fp) != XFN_STATUS_OK) return 4;
    if (xfn_suite_evaluate(suite, "missing", genome, &score) != XFN_STATUS_UNKNOWN_TASK) return 5;

    char msg[256];
    xfn_last_error_message(msg, sizeof msg);
    printf("%s %.6f %s\n", fp, score, msg);
    xfn_genome_free(genome);
    xfn_suite_free(suite);
    return strlen(fp) == 32 ? 0 : 6;
}
