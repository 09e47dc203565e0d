// Placeholder main; the real subcommand dispatcher lands with the harness.
#include <cstdio>

int main() {
    std::puts("echoformer: work in progress");
    return 1;
}
