#include "koopman/cli.hpp"

int main(int argc, char** argv) { return koopman::cli::run(argc, argv); }
