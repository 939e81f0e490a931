#include "cib/cli.hpp"

int main(int argc, char** argv) { return cib::cli::run(argc, argv); }
