#include "apdr/cli.hpp"

int main(int argc, char** argv) { return apdr::run_cli(argc, argv); }
