#include "dragon/cli.hpp"

int main(int argc, char** argv) { return dragon::cli::main(argc, argv); }
