#include "maihda/cli.hpp"

int main(int argc, char** argv) { return maihda::cli::run(argc, argv); }
