#pragma once

namespace spst {

// Pins BLAS to one thread. Multi-threaded GEMM reorders reductions, which
// would make training results depend on the machine; call once at startup.
void init_runtime();

}  // namespace spst
