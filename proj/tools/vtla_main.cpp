#include "vtla/cli.hpp"

int main(int argc, char** argv) { return vtla::cli::run(argc, argv); }
