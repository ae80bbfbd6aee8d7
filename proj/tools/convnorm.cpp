#include "convnorm/cli.hpp"

int main(int argc, char** argv) { return convnorm::cli_main(argc, argv); }
