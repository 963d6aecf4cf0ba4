#include <math.h>
#include <stdio.h>
#include "varqt.h"

int main(void) {
    VarqtHamiltonian *h = NULL;
    VarqtCircuit *c = NULL;
    if (varqt_hamiltonian_parse("1.0 Z", &h) != VARQT_STATUS_OK) return 1;
    if (varqt_circuit_from_json("{\"kind\": \"shared_rotation\"}", &c) != VARQT_STATUS_OK) return 2;
    double theta = 0.5, e = 0.0, g = 0.0;
    if (varqt_energy(c, h, &theta, 1, &e) != VARQT_STATUS_OK) return 3;
    if (varqt_gradient(c, h, &theta, 1, &g, 1) != VARQT_STATUS_OK) return 4;
    if (fabs(e - cos(theta)) > 1e-12 || fabs(g + sin(theta)) > 1e-12) return 5;
    if (varqt_gradient(c, h, &theta, 1, &g, 0) != VARQT_STATUS_BUFFER_TOO_SMALL) return 6;
    if (varqt_last_error() == NULL) return 7;
    printf("%s %.6f\n", varqt_version(), e);
    varqt_circuit_free(c);
    varqt_hamiltonian_free(h);
    return 0;
}
