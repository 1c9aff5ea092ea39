// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "mrt/cli.hpp"

int main(int argc, char** argv) { return mrt::cli_main(argc, argv, std::cout, std::cerr); }
