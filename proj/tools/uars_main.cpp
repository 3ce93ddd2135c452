// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return uars::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
