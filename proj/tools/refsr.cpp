#include "refsr/cli.hpp"

int main(int argc, char** argv) { return refsr::cli_main(argc, argv); }
