#include "art/cli.hpp"

int main(int argc, char** argv) { return art::cli::run(argc, argv); }
