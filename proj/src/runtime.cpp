#include "spst/runtime.hpp"

extern "C" void openblas_set_num_threads(int);

namespace spst {

void init_runtime() {
  static bool done = false;
  if (done) return;
  openblas_set_num_threads(1);
  done = true;
}

}  // namespace spst
