#include "fewtrans/harness.hpp"

int main(int argc, char** argv) { return fewtrans::cli_main(argc, argv); }
