#include "brainunet/cli.hpp"

int main(int argc, char** argv) { return brainunet::cli_dispatch(argc, argv); }
