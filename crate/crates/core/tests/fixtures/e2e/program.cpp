#include <iostream>

int main() {
    long long n;
    std::cin >> n;
    long long total = 0;
    for (long long i = 1; i <= n; ++i) {
        total += i;
    }
    std::cout << total << "\n";
    return 0;
}
