// SPDX-License-Identifier: Apache-2.0
#include "stomsfem/harness.hpp"

int main(int argc, char** argv) { return stomsfem::cli_main(argc, argv); }
