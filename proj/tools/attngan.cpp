#include "attngan/cli.hpp"

int main(int argc, char** argv) { return attngan::cli::run(argc, argv); }
