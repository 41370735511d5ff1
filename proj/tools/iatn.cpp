// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "iatn/cli.hpp"

int main(int argc, char** argv) { return iatn::run_cli(argc, argv, std::cout, std::cerr); }
