/*
 * SPDX-FileCopyrightText: (c) 2026 dualpeft authors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

/* The public header must compile and link as plain C. */

#include <stdio.h>
#include <string.h>

#include "dualpeft/c_api.h"

int main(void) {
    dpeft_config* cfg = NULL;
    char buf[32];
    size_t len = 0;
    if (dpeft_config_new(&cfg) != DPEFT_OK) return 1;
    if (dpeft_config_set(cfg, "partition.alpha", "0.5") != DPEFT_OK) return 2;
    if (dpeft_config_get(cfg, "partition.alpha", buf, sizeof buf, &len) != DPEFT_OK) return 3;
    if (strcmp(buf, "0.5") != 0 || len != 3) return 4;
    if (dpeft_config_set(cfg, "partition.gamma", "1") != DPEFT_E_INVALID_ARGUMENT) return 5;
    if (strstr(dpeft_last_error(), "partition.gamma") == NULL) return 6;
    dpeft_config_free(cfg);
    printf("ok\n");
    return 0;
}
