#include "mmssl/cli.hpp"

int main(int argc, char** argv) { return mmssl::run_cli(argc, argv); }
