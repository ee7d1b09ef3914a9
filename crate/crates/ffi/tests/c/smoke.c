#include <math.h>
#include <stdio.h>
#include "gti.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, gti_last_error()); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    GtiBox a = {0, 0, 10, 10};
    GtiBox b = {5, 0, 10, 10};
    double v = 0;
    CHECK(gti_iou(&a, &b, &v) == GTI_STATUS_OK);
    CHECK(fabs(v - 1.0 / 3.0) < 1e-12);
    CHECK(gti_iou(&a, NULL, &v) == GTI_STATUS_NULL_POINTER);

    GtiBox bad = {0, 0, -1, 10};
    CHECK(gti_iou(&a, &bad, &v) == GTI_STATUS_INVALID_ARGUMENT);
    CHECK(gti_last_error()[0] != '\0');

    GtiSwitch *sw = NULL;
    CHECK(gti_switch_new(0.998, &sw) == GTI_STATUS_OK);
    const double scores[3] = {0.9, 0.5, 0.95};
    const bool expect[3] = {true, false, true};
    for (int i = 0; i < 3; i++) {
        bool reground = false;
        CHECK(gti_switch_step(sw, scores[i], &reground) == GTI_STATUS_OK);
        CHECK(reground == expect[i]);
    }
    CHECK(gti_switch_saved(sw, &v) == GTI_STATUS_OK);
    CHECK(v == 0.95);
    gti_switch_free(sw);

    GtiModel *m = NULL;
    CHECK(gti_model_load("/nonexistent/model.json", &m) == GTI_STATUS_IO);
    printf("ok %s\n", gti_version());
    return 0;
}
