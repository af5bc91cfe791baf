#include "cblm/data.hpp"

#include <cstdlib>
#include <filesystem>

#include "cblm/errors.hpp"

#ifndef CBLM_DEFAULT_DATA_DIR
#define CBLM_DEFAULT_DATA_DIR ""
#endif

namespace cblm {

std::string data_dir() {
  if (const char* env = std::getenv("CBLM_DATA_DIR")) {
    if (*env) return env;
  }
  std::string built_in = CBLM_DEFAULT_DATA_DIR;
  if (!built_in.empty() && std::filesystem::exists(built_in)) return built_in;
  throw IoError("data directory not found; set CBLM_DATA_DIR");
}

}  // namespace cblm
