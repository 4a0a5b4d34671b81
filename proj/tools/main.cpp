#include "kvmt/cli.hpp"

int main(int argc, char** argv) { return kvmt::cli_dispatch(argc, argv); }
