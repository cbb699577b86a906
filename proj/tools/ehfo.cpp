// SPDX-License-Identifier: Apache-2.0
#include "ehfo/cli.hpp"

int main(int argc, char** argv) { return ehfo::cli::run(argc, argv); }
