#include <cstdio>
int main() { std::puts("biaslab"); return 0; }
