#pragma once

#include <filesystem>
#include <vector>

#include "embrank/trainers_types.hpp"

namespace embrank {

// Tab-separated data files, UTF-8, one record per line.
//   interactions: user_id \t pin_id \t kind \t timestamp   (kind: click|conversion)
//   triples:      head_type:head_id \t relation \t tail_type:tail_id

void write_interactions_tsv(const std::filesystem::path& path,
                            const std::vector<InteractionRecord>& records);
std::vector<InteractionRecord> read_interactions_tsv(const std::filesystem::path& path);

void write_triples_tsv(const std::filesystem::path& path, const std::vector<KGTriple>& triples);
std::vector<KGTriple> read_triples_tsv(const std::filesystem::path& path);

}  // namespace embrank
