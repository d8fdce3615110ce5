#include <cstdio>

#include "bmh/version.hpp"

int main() {
    std::printf("bmh %s\n", bmh::kVersion);
    return 0;
}
