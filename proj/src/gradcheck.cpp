#include "plroad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "plroad/errors.hpp"

namespace plroad {

GradcheckResult gradcheck(const LossFn& loss, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& options) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  backward(loss(inputs));

  auto evaluate = [&](std::uint64_t& branches) {
    BranchProbe probe;
    const double v = loss(inputs).item();
    branches = probe.value();
    return v;
  };
  std::uint64_t base_branches = 0;
  {
    NoGradGuard no_grad;
    evaluate(base_branches);
  }

  Rng rng(options.seed);
  GradcheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    const std::vector<double> analytic = in.has_grad()
        ? std::vector<double>(in.grad().begin(), in.grad().end())
        : std::vector<double>(in.numel(), 0.0);

    std::vector<std::size_t> entries(in.numel());
    std::iota(entries.begin(), entries.end(), 0);
    const bool sampled = options.max_entries != 0 && entries.size() > options.max_entries;
    const std::size_t wanted = sampled ? options.max_entries : entries.size();

    NoGradGuard no_grad;
    auto data = in.data_mut();
    std::size_t checked = 0;
    for (std::size_t pos = 0; pos < entries.size() && checked < wanted; ++pos) {
      if (sampled) std::swap(entries[pos], entries[pos + rng.below(entries.size() - pos)]);
      const std::size_t i = entries[pos];
      const double saved = data[i];
      std::uint64_t up_branches = 0, down_branches = 0;
      data[i] = saved + options.step;
      const double up = evaluate(up_branches);
      data[i] = saved - options.step;
      const double down = evaluate(down_branches);
      data[i] = saved;
      if (options.skip_kinks && (up_branches != base_branches || down_branches != base_branches)) {
        ++result.skipped;
        continue;
      }
      ++checked;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries;
      if (rel > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, rel);
        std::ostringstream msg;
        msg << "input " << k << " entry " << i << ": analytic " << a << " numeric " << numeric;
        result.worst = msg.str();
      }
    }
  }
  return result;
}

}  // namespace plroad
