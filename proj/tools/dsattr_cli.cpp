#include "dsattr/cli.hpp"

int main(int argc, char** argv) { return dsattr::cli_main(argc, argv); }
