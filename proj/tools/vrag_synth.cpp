// Writes a synthetic corpus with a matching mock fixture.

#include <iostream>

#include "CLI11.hpp"
#include "vrag/error.hpp"
#include "vrag/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic radiology corpus and mock fixture", "vrag_synth"};
  vrag::synth::Options o;
  std::string out;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--records", o.records)->capture_default_str();
  app.add_option("--per-cluster", o.records_per_cluster)->capture_default_str();
  app.add_option("--seed", o.seed)->capture_default_str();
  app.add_option("--image-bytes", o.image_bytes)->capture_default_str();
  app.add_option("--noise", o.noise)->capture_default_str();
  app.add_option("--dim", o.dim)->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    const auto corpus = vrag::synth::generate(o);
    vrag::synth::write(corpus, out);
    std::cerr << "wrote " << corpus.records.size() << " records to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
