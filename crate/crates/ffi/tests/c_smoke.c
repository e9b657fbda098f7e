#include <stdio.h>
#include <string.h>
#include "slipflow.h"

static const char *CONFIG =
    "[domain]\n"
    "length_x = 6.283185307179586\n"
    "modes_x = 2\n"
    "nodes_y = 12\n"
    "friction_alpha = 1.0\n"
    "viscosity = 0.5\n"
    "[basis]\n"
    "size = 4\n"
    "[time]\n"
    "horizon = 0.1\n"
    "dt = 0.01\n"
    "[initial]\n"
    "amplitude = 0.5\n";

int main(void) {
    SlipflowConfig *cfg = NULL;
    if (slipflow_config_from_toml(CONFIG, &cfg) != SLIPFLOW_STATUS_OK) {
        fprintf(stderr, "config: %s\n", slipflow_last_error());
        return 1;
    }
    SlipflowModel *model = NULL;
    if (slipflow_model_new(cfg, &model) != SLIPFLOW_STATUS_OK) {
        fprintf(stderr, "model: %s\n", slipflow_last_error());
        return 1;
    }
    SlipflowControl *ctrl = NULL;
    SlipflowTrajectory *traj = NULL;
    if (slipflow_control_from_params(model, NULL, 0, &ctrl) != SLIPFLOW_STATUS_OK ||
        slipflow_simulate_path(model, ctrl, 1, 0, &traj) != SLIPFLOW_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", slipflow_last_error());
        return 1;
    }
    size_t n = slipflow_trajectory_len(traj);
    double energy[64];
    if (n > 64 || slipflow_trajectory_energy(traj, energy, 64) != SLIPFLOW_STATUS_OK) {
        return 1;
    }
    printf("%zu %.17g %.17g\n", n, energy[0], energy[n - 1]);
    SlipflowConfig *bad = NULL;
    int status = slipflow_config_from_toml("[domain]\n", &bad);
    printf("%d %d\n", status, bad == NULL);
    slipflow_trajectory_free(traj);
    slipflow_control_free(ctrl);
    slipflow_model_free(model);
    slipflow_config_free(cfg);
    return energy[n - 1] < energy[0] ? 0 : 2;
}
