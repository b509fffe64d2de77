#include "ppscm/cli.hpp"

int main(int argc, char** argv) { return ppscm::cli::run(argc, argv); }
