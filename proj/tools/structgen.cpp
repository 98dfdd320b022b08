// SPDX-License-Identifier: Apache-2.0
#include "structgen/cli/app.hpp"

int main(int argc, char** argv) { return structgen::cli::parse_and_dispatch(argc, argv); }
