#pragma once

#include <string>
#include <vector>

#include "geoflow/net.hpp"
#include "geoflow/runtime.hpp"
#include "geoflow/trainer.hpp"
#include "geoflow/vmf.hpp"

namespace geoflow {

// Embedding container (magic "GFV1", little-endian): u32 dim, u64 record
// count, u8 paired flag, then float32 rows; paired files interleave one
// image row and one text row per record. Columns of the returned matrices
// are records, renormalised on load (a warning goes to stderr when any
// deviation exceeds 1e-3).
struct EmbeddingData {
  bool paired = false;
  MatrixXd img;  // also carries the single block of unpaired files
  MatrixXd txt;
};

void write_embeddings(const std::string& path, const MatrixXd& img,
                      const MatrixXd* txt);
EmbeddingData read_embeddings(const std::string& path);

// Checkpoint (magic "GFC1"): net config, geometry flag, training seed and
// all tensors by name. Written atomically (temp file + rename). Loading
// validates the tensor inventory; evaluating a checkpoint under the other
// geometry is an error surfaced by callers via the stored flag.
void save_checkpoint(const std::string& path, const NetParams& p, Geometry geom,
                     std::uint64_t seed);

struct Checkpoint {
  NetParams params;
  Geometry geometry = Geometry::Riemannian;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::string& path);

// Shortest-round-trip decimal formatting used by every metric emitter.
std::string format_double(double v);

// Atomic (temp + rename) whole-file write.
void write_text_file(const std::string& path, const std::string& content);

// Writes a metric CSV: a "# manifest=..." comment line, a header row, data
// rows. Cells are already formatted strings.
void write_csv(const std::string& path, const std::string& manifest_ref,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // DataError when absent
};
CsvData read_csv(const std::string& path);

// Bundled run configuration. "desk" (default) and "full" presets give the
// laptop-scale and paper-scale defaults; JSON files may select a preset and
// override individual fields. Unknown keys are rejected.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  SolverConfig solver;
  Geometry geometry = Geometry::Riemannian;
  std::string preset = "desk";
};

RunConfig preset_config(const std::string& name);
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& c);

// FNV-1a 64 over the canonical JSON dump of the resolved config.
std::string config_hash(const RunConfig& c);

// Manifest JSON naming the tool, resolved config + hash, seed, inputs and
// outputs of one run. Every metric CSV references this file.
void write_manifest(const std::string& path, const std::string& tool,
                    const RunConfig& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs);

// Mixture description round-trip so generated datasets carry their oracle.
void write_mixture_json(const std::string& path, const PairedMixture& m,
                        std::uint64_t seed);
PairedMixture read_mixture_json(const std::string& path);

}  // namespace geoflow
