#include <fstream>
#include <iostream>
#include <string>

#include "chnet/errors.hpp"
#include "chnet/gradsuite.hpp"

int run_gradcheck(std::uint64_t seed, const std::string& out) {
  using namespace chnet;
  const auto rows = run_gradient_suite({seed, seed + 1, seed + 2});
  const std::string csv = gradient_suite_csv(rows);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    f << csv;
  }
  int failed = 0;
  for (const auto& r : rows) failed += !r.pass();
  std::cerr << rows.size() - failed << " of " << rows.size() << " gradient checks passed\n";
  return failed == 0 ? 0 : 3;
}
