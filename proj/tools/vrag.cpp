#include "vrag/cli.hpp"

int main(int argc, char** argv) { return vrag::cli::run({argv, argv + argc}); }
