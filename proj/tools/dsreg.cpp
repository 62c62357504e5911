#include "dsreg/cli.hpp"

int main(int argc, char** argv) { return dsreg::cli::run(argc, argv); }
