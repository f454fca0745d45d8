#include "levitas/cli.hpp"

int main(int argc, char** argv) { return levitas::run_command(argc, argv); }
