#include "attrsae/cli.hpp"

int main(int argc, char** argv) {
  return attrsae::run_cli({argv + 1, argv + argc});
}
