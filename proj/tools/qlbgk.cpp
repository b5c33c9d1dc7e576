// Command-line driver; see `qlbgk --help`.
#include "qlbgk/harness.hpp"

int main(int argc, char** argv) { return qlbgk::run_cli(argc, argv); }
