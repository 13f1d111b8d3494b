#include "serum/cli.hpp"

int main(int argc, char** argv) { return serum::cli::run(argc, argv); }
