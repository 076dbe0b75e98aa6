#include <mffqi/cli.hpp>

int main(int argc, char** argv) { return mffqi::cli_run(argc, argv); }
