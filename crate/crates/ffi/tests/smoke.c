#include <math.h>
#include <stdio.h>
#include <string.h>

#include "seismda.h"

int main(void) {
    if (strlen(seismda_version()) == 0) return 1;

    double sources[3] = {10.0, 20.0, 40.0};
    double w[3];
    if (seismda_physics_weights(sources, 3, 20.0, 0.05, w) != SEISMDA_STATUS_OK) return 2;
    if (fabs(w[0] + w[1] + w[2] - 1.0) > 1e-12 || w[1] < w[0]) return 3;

    size_t cls = 99;
    if (seismda_label_damage(0.5, SEISMDA_TASK_DETECTION, &cls) != SEISMDA_STATUS_OK || cls != 1) return 4;

    if (seismda_label_damage(0.5, SEISMDA_TASK_DETECTION, NULL) != SEISMDA_STATUS_NULL_POINTER) return 5;
    if (seismda_last_error() == NULL) return 6;

    SeismdaModel *m = NULL;
    if (seismda_model_load("/nonexistent/model", &m) != SEISMDA_STATUS_IO || m != NULL) return 7;
    seismda_model_free(NULL);
    printf("ok %s\n", seismda_version());
    return 0;
}
