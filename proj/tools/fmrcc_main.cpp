#include "fmrcc/cli.hpp"

int main(int argc, char** argv) { return fmrcc::run_cli(argc, argv); }
