// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "tools/cli/cli.h"

int main(int argc, char** argv) { return loomflow::cli::main(argc, argv, std::cout, std::cerr); }
