#include "latoracle/cli.hpp"

int main(int argc, char** argv) { return latoracle::cli::run(argc, argv); }
