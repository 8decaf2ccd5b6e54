#include "sgec/cli.hpp"

int main(int argc, char** argv) { return sgec::cli::run(argc, argv); }
