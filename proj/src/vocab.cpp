#include "diffcap/vocab.hpp"

#include "diffcap/types.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace diffcap {

namespace {
const char* const kReserved[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const char* r : kReserved) add(r);
}

Vocabulary::Vocabulary(std::span<const std::string> words) : Vocabulary() {
  for (const auto& w : words) add(w);
}

void Vocabulary::add(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos)
    throw std::invalid_argument("vocabulary tokens must be non-empty and whitespace-free");
  if (!index_.emplace(token, size()).second)
    throw std::invalid_argument("duplicate vocabulary token: " + token);
  tokens_.push_back(token);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < 4) throw std::invalid_argument("vocabulary file lacks reserved tokens");
  for (int i = 0; i < 4; ++i)
    if (lines[i] != kReserved[i])
      throw std::invalid_argument("vocabulary line " + std::to_string(i) + " must be " +
                                  kReserved[i]);
  return Vocabulary(std::span<const std::string>(lines).subspan(4));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("write failed for " + path);
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> words, int length) const {
  if (static_cast<int>(words.size()) + 2 > length)
    throw std::length_error("caption of " + std::to_string(words.size()) +
                            " words does not fit length " + std::to_string(length));
  std::vector<int> ids(length, kPad);
  ids[0] = kBos;
  for (std::size_t i = 0; i < words.size(); ++i) ids[i + 1] = id(words[i]);
  ids[words.size() + 1] = kEos;
  return ids;
}

std::vector<int> Vocabulary::strip(std::span<const int> ids) const {
  std::vector<int> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(id);
  }
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : strip(ids)) out.push_back(token(id));
  return out;
}

std::string Vocabulary::join(std::span<const int> ids) const {
  std::string s;
  for (const auto& w : decode(ids)) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace diffcap
