#include "bamd/cli.hpp"

int main(int argc, char** argv) { return bamd::cli::run(argc, argv); }
