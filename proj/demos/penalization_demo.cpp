// Penalized values y^m increasing to the reflected value on the 4-step |omega| instance,
// then the frozen-scheme envelopes for the same barrier on [0, 1].

#include <cstdio>

#include "ppde/ppde.hpp"

int main() {
    auto cfg = ppde::named_instance("abs_stopping_active");
    cfg["T"] = 4.0 / 260.0;
    const auto data = ppde::problem_from_json(cfg);
    const ppde::PathPoint root{0.0, ppde::point_path(0.0, 0.0)};

    ppde::TreeOptions opt;
    opt.n_steps = 4;
    const double reflected = ppde::solve_rbsde_tree(data, root, opt).y0;
    std::printf("%6s %14s %14s\n", "m", "y0^m", "y0 - y0^m");
    for (double m = 1; m <= 256; m *= 2) {
        const double y = ppde::solve_penalized(data, root, opt, m).y0;
        std::printf("%6.0f %14.8f %14.3e\n", m, y, reflected - y);
    }
    std::printf("reflected %14.8f\n\n", reflected);

    const auto full = ppde::named_problem("abs_stopping_active");
    const double u0 = ppde::solve_rbsde_tree(full, root, 200).y0;
    std::printf("u0 (tree, 200 steps) = %.6f\n", u0);
    std::printf("%6s %12s %12s %12s %12s\n", "alpha", "theta0", "gamma0", "psi0", "phi0");
    for (double alpha : {0.4, 0.2, 0.1}) {
        const auto e = ppde::envelope_values(full, alpha, 256.0, 2);
        std::printf("%6.2f %12.6f %12.6f %12.6f %12.6f\n", alpha, e.theta0, e.gamma0, e.psi0, e.phi0);
    }
}
