#include "terse/cli.hpp"

int main(int argc, char** argv) { return terse::cli_main(argc, argv); }
