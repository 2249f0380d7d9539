#include <chrono>
#include <iostream>
#include <thread>

int main() {
    long long n;
    std::cin >> n;
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    std::cout << n << "\n";
    return 0;
}
