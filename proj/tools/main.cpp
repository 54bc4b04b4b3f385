#include "iman/cli.hpp"

int main(int argc, char** argv) { return iman::run_cli(argc, argv); }
