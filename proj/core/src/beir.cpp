// SPDX-License-Identifier: Apache-2.0
#include "xlret/beir.hpp"

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "xlret/errors.hpp"

namespace xlret {

namespace {

using ordered_json = nlohmann::ordered_json;

std::ofstream open_for_write(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read " + file.string());
  return in;
}

ordered_json parse_line(const std::filesystem::path& file,
                        const std::string& line, std::size_t line_no) {
  try {
    return ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(file.string() + " line " + std::to_string(line_no) +
                    ": " + e.what());
  }
}

std::string get_string(const ordered_json& j, const char* key,
                       const std::filesystem::path& file,
                       std::size_t line_no) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw DataError(file.string() + " line " + std::to_string(line_no) +
                    ": missing string field \"" + key + "\"");
  }
  return j[key].get<std::string>();
}

}  // namespace

void write_beir(const RetrievalDataset& dataset,
                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "qrels");
  {
    std::ofstream out = open_for_write(dir / "corpus.jsonl");
    for (const DocRecord& doc : dataset.corpus) {
      ordered_json j;
      j["_id"] = doc.id;
      j["title"] = doc.title;
      j["text"] = doc.text;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out = open_for_write(dir / "queries.jsonl");
    for (const QueryRecord& q : dataset.queries) {
      ordered_json j;
      j["_id"] = q.id;
      j["text"] = q.text;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out = open_for_write(dir / "qrels" / "test.tsv");
    out << "query-id\tcorpus-id\tscore\n";
    for (const QrelRecord& r : dataset.qrels) {
      out << r.query_id << '\t' << r.doc_id << '\t' << r.relevance << '\n';
    }
  }
}

RetrievalDataset read_beir(const std::filesystem::path& dir) {
  RetrievalDataset ds;
  {
    const std::filesystem::path file = dir / "corpus.jsonl";
    std::ifstream in = open_for_read(file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const ordered_json j = parse_line(file, line, line_no);
      ds.corpus.push_back({get_string(j, "_id", file, line_no),
                           get_string(j, "title", file, line_no),
                           get_string(j, "text", file, line_no)});
    }
  }
  {
    const std::filesystem::path file = dir / "queries.jsonl";
    std::ifstream in = open_for_read(file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const ordered_json j = parse_line(file, line, line_no);
      ds.queries.push_back({get_string(j, "_id", file, line_no),
                            get_string(j, "text", file, line_no)});
    }
  }
  {
    const std::filesystem::path file = dir / "qrels" / "test.tsv";
    std::ifstream in = open_for_read(file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line_no == 1) {
        if (line.rfind("query-id", 0) != 0) {
          throw DataError(file.string() + " line 1: expected header row");
        }
        continue;
      }
      if (line.empty()) continue;
      const std::size_t t1 = line.find('\t');
      const std::size_t t2 =
          t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos) {
        throw DataError(file.string() + " line " + std::to_string(line_no) +
                        ": expected three tab-separated fields");
      }
      QrelRecord r;
      r.query_id = line.substr(0, t1);
      r.doc_id = line.substr(t1 + 1, t2 - t1 - 1);
      try {
        r.relevance = std::stoi(line.substr(t2 + 1));
      } catch (const std::exception&) {
        throw DataError(file.string() + " line " + std::to_string(line_no) +
                        ": relevance is not an integer");
      }
      ds.qrels.push_back(std::move(r));
    }
  }
  return ds;
}

void write_parallel(const std::vector<ParallelPair>& pairs,
                    const std::filesystem::path& file) {
  std::ofstream out = open_for_write(file);
  for (const ParallelPair& p : pairs) {
    ordered_json j;
    j["source"] = p.source;
    j["target"] = p.target;
    j["lang_id"] = p.lang_id;
    out << j.dump() << '\n';
  }
}

std::vector<ParallelPair> read_parallel(const std::filesystem::path& file) {
  std::ifstream in = open_for_read(file);
  std::vector<ParallelPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const ordered_json j = parse_line(file, line, line_no);
    ParallelPair p;
    p.source = get_string(j, "source", file, line_no);
    p.target = get_string(j, "target", file, line_no);
    if (!j.contains("lang_id") || !j["lang_id"].is_number_unsigned()) {
      throw DataError(file.string() + " line " + std::to_string(line_no) +
                      ": missing unsigned field \"lang_id\"");
    }
    p.lang_id = j["lang_id"].get<std::size_t>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace xlret
