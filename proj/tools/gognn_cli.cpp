#include "gognn/cli.hpp"

int main(int argc, char** argv) { return gognn::run_cli(argc, argv); }
