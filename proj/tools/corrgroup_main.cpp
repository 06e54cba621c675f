#include <corrgroup/cli.hpp>

int main(int argc, char** argv) { return corrgroup::cli::dispatch(argc, argv); }
