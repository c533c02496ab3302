#include "bsplat/cli.hpp"

int main(int argc, char** argv) { return bsplat::run_cli(argc, argv); }
