#include "dfsq/cli.hpp"

int main(int argc, char** argv) { return dfsq::cli_main(argc, argv); }
