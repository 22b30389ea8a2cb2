#include "xferscope/cli.hpp"

int main(int argc, char** argv) { return xferscope::cli::run(argc, argv); }
