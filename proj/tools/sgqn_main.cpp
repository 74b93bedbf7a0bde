#include "sgqn/cli.hpp"

int main(int argc, char** argv) { return sgqn::run_cli(argc, argv); }
