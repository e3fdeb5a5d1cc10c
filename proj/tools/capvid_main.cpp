#include <cstdio>

int main() {
  std::puts("capvid: CLI under construction");
  return 0;
}
