#include <proxmed/cli.hpp>

int main(int argc, char** argv) { return proxmed::cli::run_cli(argc, argv); }
