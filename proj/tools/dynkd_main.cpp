#include "dynkd/cli.hpp"

int main(int argc, char** argv) { return dynkd::run_cli(argc, argv); }
