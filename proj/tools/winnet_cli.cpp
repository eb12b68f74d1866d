#include "winnet/cli.hpp"

int main(int argc, char** argv) { return winnet::run(argc, argv); }
