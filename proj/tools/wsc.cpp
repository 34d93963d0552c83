// Command-line frontend; subcommands land here as the library grows.
#include <cstdio>

int main() {
  std::puts("wsc: no subcommands wired up yet");
  return 1;
}
