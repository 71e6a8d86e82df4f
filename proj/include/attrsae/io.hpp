// Binary file formats (bit-exact, little-endian) and config echo parsing.
//
//   ATSE  embeddings   header {magic, version u32, n u64, d u32, dtype u8},
//                      payload n*d binary32 row-major
//   ATSM  checkpoint   header {magic, version u32, d u32, m u32,
//                      config_len u64, config bytes}, then W_enc (m x d,
//                      row-major), b_enc, W_dec (d x m, row-major), b_pre,
//                      all binary32
//   ATSD  dictionary   binary64 payload (atoms, offset, frequencies) so the
//                      unit-norm / sum-to-one invariants survive the disk
//   ATSC  sparse codes per record: count u32, indices u32[], coeffs f64[]
//
// All writes go to a temp file in the same directory and are renamed into
// place, so an interrupted run never leaves a torn file behind.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attrsae/synth.hpp"
#include "attrsae/types.hpp"

namespace attrsae {

void write_embeddings(const std::string& path, const EmbeddingBatch& batch);
EmbeddingBatch read_embeddings(const std::string& path);

void save_checkpoint(const std::string& path, const SaeModel& model,
                     const TrainConfig& cfg);
std::pair<SaeModel, TrainConfig> load_checkpoint(const std::string& path);

void write_dictionary(const std::string& path, const PlantedDictionary& dict);
PlantedDictionary read_dictionary(const std::string& path);

void write_codes(const std::string& path, const std::vector<SparseCode>& codes,
                 int64_t m);
std::vector<SparseCode> read_codes(const std::string& path);

// Reads little-endian float32/float64 2-D .npy (v1.0/2.0, C order) so
// externally exported embeddings can be ingested.
EmbeddingBatch read_npy(const std::string& path);

// key=value lines, one field per line; doubles rendered shortest-round-trip
// so parse(encode(cfg)) reproduces every field bit-exactly.
std::string encode_config(const TrainConfig& cfg);
TrainConfig parse_config(const std::string& text);  // throws ConfigParseError

}  // namespace attrsae
