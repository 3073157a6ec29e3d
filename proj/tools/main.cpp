#include <iostream>

int main() {
    std::cout << "specflow\n";
    return 0;
}
