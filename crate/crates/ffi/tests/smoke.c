#include <stdio.h>
#include <string.h>
#include "peakfn.h"

static const char *CONFIG =
    "{\"family\":{\"name\":\"disc\",\"t_points\":1},\"eta1\":0.5,\"seed\":8,"
    "\"verification\":{\"zeta_count\":4,\"sample_budget\":300,\"local_samples\":60,"
    "\"holomorphy_points\":10,\"triples_per_delta\":2}}";

int main(void) {
    PkPipeline *p = NULL;
    if (pk_pipeline_new("{\"family\":\"torus\",\"seed\":1}", &p) != PK_STATUS_CONFIG || p != NULL) return 10;
    if (strstr(pk_last_error_message(), "torus") == NULL) return 11;

    if (pk_pipeline_new(CONFIG, &p) != PK_STATUS_OK) return 12;
    if (pk_pipeline_dimension(p) != 1) return 13;
    if (pk_pipeline_certify(p) != PK_STATUS_OK) {
        fprintf(stderr, "%s\n", pk_last_error_message());
        return 14;
    }
    double zeta[2] = {0.0, 1.0};
    double z[2] = {0.1, 0.2};
    double re = 0.0, im = 0.0;
    if (pk_pipeline_eval(p, 0.0, zeta, zeta, &re, &im) != PK_STATUS_OK) return 15;
    if (re < 1.0 - 1e-8 || re > 1.0 + 1e-8 || im < -1e-8 || im > 1e-8) return 16;
    if (pk_pipeline_eval(p, 0.0, zeta, z, &re, &im) != PK_STATUS_OK) return 17;
    if (re * re + im * im >= 1.0) return 18;

    char *report = NULL;
    PkStatus s = pk_pipeline_verify(p, &report);
    if (s != PK_STATUS_OK || report == NULL || strstr(report, "\"pass\": true") == NULL) return 19;
    pk_string_free(report);
    pk_pipeline_free(p);
    printf("smoke ok %s\n", pk_version());
    return 0;
}
