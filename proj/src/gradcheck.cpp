#include "r2n2/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace r2n2::ad {

GradCheckReport finite_diff_gradient_check(const OpBuilder& op, const Tensor& input, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_gradient_check: eps must be > 0");

    Tensor analytic(input.shape());
    {
        Tape tape;
        const NodeId in = tape.leaf(input, true);
        const NodeId out = op(tape, in);
        if (tape.val(out).size() != 1)
            throw std::invalid_argument("finite_diff_gradient_check: op must produce a scalar");
        tape.backward(out);
        if (!tape.grad(in).empty()) analytic = tape.grad(in);
    }

    auto eval = [&](const Tensor& x) {
        Tape tape;
        return tape.scalar_val(op(tape, tape.leaf(x, false)));
    };

    GradCheckReport report;
    Tensor probe = input;
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double x0 = input[i];
        probe[i] = x0 + eps;
        const double fp = eval(probe);
        probe[i] = x0 - eps;
        const double fm = eval(probe);
        probe[i] = x0;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = (a == numeric) ? 0.0 : std::abs(a - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    return report;
}

}  // namespace r2n2::ad
