#pragma once

#include <string>

namespace cblm {

// Directory holding the vendored data tables (scales, pKa, DIWV, vocab).
// Resolution order: CBLM_DATA_DIR environment variable, then the path
// baked in at compile time.
std::string data_dir();

}  // namespace cblm
