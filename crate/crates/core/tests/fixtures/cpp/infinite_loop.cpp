#include <iostream>

int main() {
    long long a, b;
    std::cin >> a >> b;
    volatile long long sink = 0;
    for (;;) {
        sink += a + b;
    }
    return 0;
}
