#include "selfheal/cli.hpp"

int main(int argc, char** argv) { return selfheal::cli::run(argc, argv); }
