#include "deid/cli.hpp"

int main(int argc, char** argv) { return deid::cli::run(argc, argv); }
