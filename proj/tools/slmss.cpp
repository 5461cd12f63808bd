// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#include <string>
#include <vector>

#include "slmss/cli.hpp"

int main(int argc, char** argv) {
    return slmss::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
