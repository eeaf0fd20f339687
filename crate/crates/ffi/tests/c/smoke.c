#include <stdio.h>
#include "hmlabel.h"

int main(void) {
    double g = 0.0;
    if (hm_decay_likelihood(1, 1, 0.0, 1.0, 4, &g) != HM_STATUS_OK || g != 1.0) return 1;

    size_t k[2] = {3, 3}, s[2] = {1, 1}, d[2] = {1, 1}, rf = 0;
    if (hm_receptive_field(k, s, d, 2, &rf) != HM_STATUS_OK || rf != 5) return 2;

    HmField *field = NULL;
    if (hm_field_new(11, 11, 0.01, 0.0, 0.0, 4, &field) != HM_STATUS_OK) return 3;
    if (hm_field_new(1, 11, 0.01, 0.0, 0.0, 4, &field) != HM_STATUS_INVALID_ARGUMENT) return 4;
    char msg[128];
    if (hm_last_error_message(msg, sizeof msg) == 0) return 5;
    hm_field_free(field);
    printf("ok %s\n", hm_version());
    return 0;
}
