#include "idol/cli.hpp"

int main(int argc, char** argv) { return idol::run_cli(argc, argv); }
