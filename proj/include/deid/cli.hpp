#pragma once

namespace deid::cli {

int run(int argc, const char* const* argv);

}  // namespace deid::cli
