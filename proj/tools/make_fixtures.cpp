// Writes the reference layouts used by examples and CLI tests.
#include <filesystem>
#include <iostream>

#include "iontrap/fixtures.hpp"
#include "iontrap/layout.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "fixtures";
  std::filesystem::create_directories(dir);
  iontrap::save_layout(iontrap::fixtures::triangle_array(), (dir / "triangle_array.json").string());
  iontrap::save_layout(iontrap::fixtures::single_ring(), (dir / "single_ring.json").string());
  std::cout << "wrote layouts to " << dir.string() << "\n";
  return 0;
}
