#include "embrank/data_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "embrank/errors.hpp"

namespace embrank {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(std::string("bad ") + what + ": '" + s + "'");
  return v;
}

std::int64_t parse_i64(const std::string& s, const char* what) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(std::string("bad ") + what + ": '" + s + "'");
  return v;
}

KGNode parse_node(const std::string& s) {
  const std::size_t colon = s.find(':');
  if (colon == std::string::npos) throw DataError("bad node (want type:id): '" + s + "'");
  return {entity_type_from_name(s.substr(0, colon)), parse_u64(s.substr(colon + 1), "node id")};
}

}  // namespace

void write_interactions_tsv(const std::filesystem::path& path,
                            const std::vector<InteractionRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& r : records)
    out << r.user_id << '\t' << r.pin_id << '\t'
        << (r.kind == InteractionKind::CLICK ? "click" : "conversion") << '\t' << r.timestamp
        << '\n';
}

std::vector<InteractionRecord> read_interactions_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<InteractionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4)
      throw DataError("interactions line " + std::to_string(lineno) + ": want 4 fields");
    InteractionRecord rec;
    rec.user_id = parse_u64(fields[0], "user_id");
    rec.pin_id = parse_u64(fields[1], "pin_id");
    if (fields[2] == "click")
      rec.kind = InteractionKind::CLICK;
    else if (fields[2] == "conversion")
      rec.kind = InteractionKind::CONVERSION;
    else
      throw DataError("interactions line " + std::to_string(lineno) + ": bad kind '" + fields[2] + "'");
    rec.timestamp = parse_i64(fields[3], "timestamp");
    if (rec.timestamp < 0)
      throw DataError("interactions line " + std::to_string(lineno) + ": negative timestamp");
    out.push_back(rec);
  }
  return out;
}

void write_triples_tsv(const std::filesystem::path& path, const std::vector<KGTriple>& triples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& t : triples)
    out << entity_type_name(t.head.type) << ':' << t.head.id << '\t' << relation_name(t.relation)
        << '\t' << entity_type_name(t.tail.type) << ':' << t.tail.id << '\n';
}

std::vector<KGTriple> read_triples_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<KGTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw DataError("triples line " + std::to_string(lineno) + ": want 3 fields");
    out.push_back({parse_node(fields[0]), relation_from_name(fields[1]), parse_node(fields[2])});
  }
  return out;
}

}  // namespace embrank
