#include <cstdio>

int main() {
  std::puts("retex");
  return 0;
}
