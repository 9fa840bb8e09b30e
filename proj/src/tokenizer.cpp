#include "dlgforge/tokenizer.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

namespace dlg {

namespace {

using json = nlohmann::json;

u64 pack_pair(i32 l, i32 r) { return (static_cast<u64>(static_cast<u32>(l)) << 32) | static_cast<u32>(r); }

/// Merges every left-to-right occurrence of (l, r) in ids into merged_id.
void apply_merge(std::vector<i32>& ids, i32 l, i32 r, i32 merged_id) {
  size_t w = 0;
  for (size_t i = 0; i < ids.size();) {
    if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
      ids[w++] = merged_id;
      i += 2;
    } else {
      ids[w++] = ids[i];
      i += 1;
    }
  }
  ids.resize(w);
}

}  // namespace

std::string escape_symbol(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (unsigned char b : bytes) {
    if (b == '\\') {
      out += "\\\\";
    } else if (b >= 0x21 && b <= 0x7E) {
      out += static_cast<char>(b);
    } else {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "\\x%02X", b);
      out += buf;
    }
  }
  return out;
}

std::string unescape_symbol(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (size_t i = 0; i < text.size();) {
    if (text[i] == '\\') {
      if (i + 1 < text.size() && text[i + 1] == '\\') {
        out += '\\';
        i += 2;
      } else if (i + 3 < text.size() && text[i + 1] == 'x') {
        auto hex = [](char c) -> int {
          if (c >= '0' && c <= '9') return c - '0';
          if (c >= 'A' && c <= 'F') return c - 'A' + 10;
          if (c >= 'a' && c <= 'f') return c - 'a' + 10;
          fail("bad escape in symbol");
        };
        out += static_cast<char>(hex(text[i + 2]) * 16 + hex(text[i + 3]));
        i += 4;
      } else {
        fail("bad escape in symbol");
      }
    } else {
      out += text[i];
      i += 1;
    }
  }
  return out;
}

const std::vector<std::string>& BpeCodec::default_special_names() {
  static const std::vector<std::string> names = {"<|eos|>", "<|sep_utt|>", "<|sep_pad|>", "<|pad|>"};
  return names;
}

std::vector<std::string_view> BpeCodec::pre_segment(std::string_view text) {
  std::vector<std::string_view> chunks;
  size_t i = 0;
  while (i < text.size()) {
    size_t start = i;
    while (i < text.size() && is_ascii_space(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !is_ascii_space(static_cast<unsigned char>(text[i]))) ++i;
    chunks.push_back(text.substr(start, i - start));
  }
  return chunks;
}

void BpeCodec::init_base(const std::vector<std::string>& special_names) {
  symbols_.reserve(kByteAlphabet + special_names.size());
  for (int b = 0; b < kByteAlphabet; ++b) {
    symbols_.emplace_back(1, static_cast<char>(b));
    special_flag_.push_back(false);
    symbol_to_id_[symbols_.back()] = b;
  }
  special_names_ = special_names;
  for (const auto& name : special_names) {
    i32 id = static_cast<i32>(symbols_.size());
    symbols_.push_back(name);
    special_flag_.push_back(true);
    symbol_to_id_[name] = id;
  }
}

BpeCodec BpeCodec::train(std::string_view corpus, int target_vocab_size,
                         const std::vector<std::string>& special_names) {
  if (corpus.empty()) fail("empty corpus");
  int base = kByteAlphabet + static_cast<int>(special_names.size());
  // target == base is a valid zero-merge codec; only a target that cannot
  // even hold the byte alphabet plus specials is an error.
  if (target_vocab_size < base) fail("vocab size below base alphabet");

  BpeCodec codec;
  codec.init_base(special_names);

  // Unique pre-segmented chunks with occurrence counts.
  std::unordered_map<std::string, i64> chunk_counts;
  for (std::string_view c : pre_segment(corpus)) chunk_counts[std::string(c)] += 1;
  std::vector<std::pair<std::vector<i32>, i64>> chunks;
  chunks.reserve(chunk_counts.size());
  for (const auto& [bytes, count] : chunk_counts) {
    std::vector<i32> ids(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) ids[i] = static_cast<unsigned char>(bytes[i]);
    chunks.emplace_back(std::move(ids), count);
  }

  int budget = target_vocab_size - base;
  for (int rank = 0; rank < budget; ++rank) {
    std::unordered_map<u64, i64> pair_counts;
    for (const auto& [ids, count] : chunks)
      for (size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[pack_pair(ids[i], ids[i + 1])] += count;
    if (pair_counts.empty()) break;

    // Highest count wins; ties go to the lexicographically smaller left
    // symbol, then right symbol. Pairs whose concatenation already names a
    // token are skipped so symbol -> id stays a bijection.
    bool found = false;
    i64 best_count = 0;
    i32 best_l = 0, best_r = 0;
    for (const auto& [key, count] : pair_counts) {
      i32 l = static_cast<i32>(key >> 32);
      i32 r = static_cast<i32>(key & 0xFFFFFFFFu);
      std::string concat = codec.symbols_[l] + codec.symbols_[r];
      if (codec.symbol_to_id_.count(concat)) continue;
      if (!found || count > best_count ||
          (count == best_count && (codec.symbols_[l] < codec.symbols_[best_l] ||
                                   (codec.symbols_[l] == codec.symbols_[best_l] &&
                                    codec.symbols_[r] < codec.symbols_[best_r])))) {
        found = true;
        best_count = count;
        best_l = l;
        best_r = r;
      }
    }
    if (!found) break;

    i32 merged_id = static_cast<i32>(codec.symbols_.size());
    std::string concat = codec.symbols_[best_l] + codec.symbols_[best_r];
    codec.symbols_.push_back(concat);
    codec.special_flag_.push_back(false);
    codec.symbol_to_id_[concat] = merged_id;
    codec.merge_lookup_[pack_pair(best_l, best_r)] = {rank, merged_id};
    codec.merges_.emplace_back(best_l, best_r);
    for (auto& [ids, count] : chunks) apply_merge(ids, best_l, best_r, merged_id);
  }
  return codec;
}

std::vector<i32> BpeCodec::encode_chunk(std::string_view chunk) const {
  std::vector<i32> ids(chunk.size());
  for (size_t i = 0; i < chunk.size(); ++i) ids[i] = static_cast<unsigned char>(chunk[i]);
  while (ids.size() >= 2) {
    int best_rank = -1;
    i32 best_l = 0, best_r = 0, best_id = 0;
    for (size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_lookup_.find(pack_pair(ids[i], ids[i + 1]));
      if (it == merge_lookup_.end()) continue;
      if (best_rank < 0 || it->second.first < best_rank) {
        best_rank = it->second.first;
        best_l = ids[i];
        best_r = ids[i + 1];
        best_id = it->second.second;
      }
    }
    if (best_rank < 0) break;
    apply_merge(ids, best_l, best_r, best_id);
  }
  return ids;
}

std::vector<i32> BpeCodec::encode(std::string_view text) const {
  std::vector<i32> out;
  for (std::string_view chunk : pre_segment(text)) {
    std::vector<i32> ids = encode_chunk(chunk);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::string BpeCodec::decode(const std::vector<i32>& ids) const {
  std::string out;
  for (i32 id : ids) {
    if (id < 0 || id >= vocab_size()) fail("id out of range");
    if (special_flag_[static_cast<size_t>(id)]) continue;
    out += symbols_[static_cast<size_t>(id)];
  }
  return out;
}

i32 BpeCodec::special_id(const std::string& name) const {
  for (size_t i = 0; i < special_names_.size(); ++i)
    if (special_names_[i] == name) return static_cast<i32>(kByteAlphabet + i);
  fail("unknown special token: " + name);
}

SpecialTokens BpeCodec::specials() const {
  SpecialTokens s;
  s.eos = special_id("<|eos|>");
  s.sep_utt = special_id("<|sep_utt|>");
  s.sep_pad = special_id("<|sep_pad|>");
  s.pad = special_id("<|pad|>");
  return s;
}

std::string BpeCodec::serialize_vocab() const {
  std::string out;
  for (size_t id = 0; id < symbols_.size(); ++id) {
    out += std::to_string(id);
    out += '\t';
    out += escape_symbol(symbols_[id]);
    out += '\n';
  }
  return out;
}

std::string BpeCodec::serialize_merges() const {
  std::string out;
  for (const auto& [l, r] : merges_) {
    out += escape_symbol(symbols_[static_cast<size_t>(l)]);
    out += ' ';
    out += escape_symbol(symbols_[static_cast<size_t>(r)]);
    out += '\n';
  }
  return out;
}

u64 BpeCodec::vocab_hash() const { return fnv1a64(serialize_vocab()); }

void BpeCodec::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "vocab.tsv", serialize_vocab());
  write_text_file(dir / "merges.txt", serialize_merges());
  json meta;
  meta["kind"] = "bpe";
  meta["vocab_size"] = vocab_size();
  json specials = json::object();
  for (size_t i = 0; i < special_names_.size(); ++i)
    specials[special_names_[i]] = kByteAlphabet + static_cast<int>(i);
  meta["specials"] = specials;
  meta["special_order"] = special_names_;
  write_text_file(dir / "bpe_meta.json", meta.dump(2) + "\n");
}

BpeCodec BpeCodec::load(const std::filesystem::path& dir) {
  json meta = json::parse(read_text_file(dir / "bpe_meta.json"));
  if (meta.at("kind").get<std::string>() != "bpe") fail("codec kind mismatch");
  std::vector<std::string> special_names = meta.at("special_order").get<std::vector<std::string>>();

  BpeCodec codec;
  codec.init_base(special_names);

  std::string vocab_text = read_text_file(dir / "vocab.tsv");
  size_t base = static_cast<size_t>(kByteAlphabet) + special_names.size();
  std::vector<std::string> lines = split(vocab_text, '\n');
  std::vector<std::string> merged_symbols;
  for (const std::string& line : lines) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) fail("malformed vocab line: " + line);
    size_t id = static_cast<size_t>(std::stoull(cols[0]));
    std::string sym = unescape_symbol(cols[1]);
    if (id < base) {
      if (sym != codec.symbols_[id]) fail("vocab file disagrees with base alphabet");
      continue;
    }
    if (id != base + merged_symbols.size()) fail("vocab ids not contiguous");
    merged_symbols.push_back(sym);
  }
  for (const std::string& sym : merged_symbols) {
    i32 id = static_cast<i32>(codec.symbols_.size());
    codec.symbols_.push_back(sym);
    codec.special_flag_.push_back(false);
    codec.symbol_to_id_[sym] = id;
  }

  std::string merges_text = read_text_file(dir / "merges.txt");
  int rank = 0;
  for (const std::string& line : split(merges_text, '\n')) {
    if (line.empty()) continue;
    auto cols = split(line, ' ');
    if (cols.size() != 2) fail("malformed merge line: " + line);
    std::string lsym = unescape_symbol(cols[0]);
    std::string rsym = unescape_symbol(cols[1]);
    auto lit = codec.symbol_to_id_.find(lsym);
    auto rit = codec.symbol_to_id_.find(rsym);
    auto mit = codec.symbol_to_id_.find(lsym + rsym);
    if (lit == codec.symbol_to_id_.end() || rit == codec.symbol_to_id_.end() ||
        mit == codec.symbol_to_id_.end())
      fail("merge references unknown symbol: " + line);
    codec.merge_lookup_[pack_pair(lit->second, rit->second)] = {rank, mit->second};
    codec.merges_.emplace_back(lit->second, rit->second);
    ++rank;
  }
  return codec;
}

// ---------------------------------------------------------------------------
// BasicVocab
// ---------------------------------------------------------------------------

BasicVocab BasicVocab::build(std::string_view corpus, int min_frequency,
                             const std::vector<std::string>& special_names) {
  std::string lowered = lower_ascii(corpus);
  std::vector<std::string> words;
  {
    size_t i = 0;
    while (i < lowered.size()) {
      while (i < lowered.size() && is_ascii_space(static_cast<unsigned char>(lowered[i]))) ++i;
      size_t start = i;
      while (i < lowered.size() && !is_ascii_space(static_cast<unsigned char>(lowered[i]))) ++i;
      if (i > start) words.push_back(lowered.substr(start, i - start));
    }
  }
  if (words.empty()) fail("empty corpus");

  std::unordered_map<std::string, i64> counts;
  for (const std::string& w : words) counts[w] += 1;

  std::vector<std::pair<std::string, i64>> kept;
  i64 covered = 0;
  for (const auto& [w, c] : counts) {
    if (c >= min_frequency) {
      kept.emplace_back(w, c);
      covered += c;
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  BasicVocab v;
  v.special_names_ = special_names;
  for (const std::string& name : special_names) v.id_to_word_.push_back(name);
  v.unk_id_ = static_cast<i32>(v.id_to_word_.size());
  v.id_to_word_.push_back("<|unk|>");
  for (const auto& [w, c] : kept) {
    v.word_to_id_[w] = static_cast<i32>(v.id_to_word_.size());
    v.id_to_word_.push_back(w);
  }
  v.coverage_ = static_cast<double>(covered) / static_cast<double>(words.size());
  v.min_frequency_ = min_frequency;
  return v;
}

std::vector<i32> BasicVocab::encode(std::string_view text) const {
  std::string lowered = lower_ascii(text);
  std::vector<i32> out;
  size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && is_ascii_space(static_cast<unsigned char>(lowered[i]))) ++i;
    size_t start = i;
    while (i < lowered.size() && !is_ascii_space(static_cast<unsigned char>(lowered[i]))) ++i;
    if (i > start) {
      auto it = word_to_id_.find(lowered.substr(start, i - start));
      out.push_back(it == word_to_id_.end() ? unk_id_ : it->second);
    }
  }
  return out;
}

std::string BasicVocab::decode(const std::vector<i32>& ids) const {
  std::string out;
  for (i32 id : ids) {
    if (id < 0 || id >= vocab_size()) fail("id out of range");
    if (id < unk_id_) continue;  // specials
    if (!out.empty()) out += ' ';
    out += id == unk_id_ ? "<unk>" : id_to_word_[static_cast<size_t>(id)];
  }
  return out;
}

SpecialTokens BasicVocab::specials() const {
  SpecialTokens s;
  for (size_t i = 0; i < special_names_.size(); ++i) {
    i32 id = static_cast<i32>(i);
    if (special_names_[i] == "<|eos|>") s.eos = id;
    if (special_names_[i] == "<|sep_utt|>") s.sep_utt = id;
    if (special_names_[i] == "<|sep_pad|>") s.sep_pad = id;
    if (special_names_[i] == "<|pad|>") s.pad = id;
  }
  if (s.eos < 0 || s.sep_utt < 0 || s.sep_pad < 0 || s.pad < 0)
    fail("basic vocab missing standard special tokens");
  return s;
}

u64 BasicVocab::vocab_hash() const {
  std::string out;
  for (size_t id = 0; id < id_to_word_.size(); ++id) {
    out += std::to_string(id);
    out += '\t';
    out += id_to_word_[id];
    out += '\n';
  }
  return fnv1a64(out);
}

void BasicVocab::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::string out;
  for (size_t id = 0; id < id_to_word_.size(); ++id) {
    out += std::to_string(id);
    out += '\t';
    out += id_to_word_[id];
    out += '\n';
  }
  write_text_file(dir / "basic_vocab.tsv", out);
  json meta;
  meta["kind"] = "basic";
  meta["unk_id"] = unk_id_;
  meta["min_frequency"] = min_frequency_;
  meta["coverage"] = coverage_;
  meta["special_order"] = special_names_;
  write_text_file(dir / "basic_meta.json", meta.dump(2) + "\n");
}

BasicVocab BasicVocab::load(const std::filesystem::path& dir) {
  json meta = json::parse(read_text_file(dir / "basic_meta.json"));
  if (meta.at("kind").get<std::string>() != "basic") fail("codec kind mismatch");
  BasicVocab v;
  v.special_names_ = meta.at("special_order").get<std::vector<std::string>>();
  v.unk_id_ = meta.at("unk_id").get<i32>();
  v.min_frequency_ = meta.at("min_frequency").get<int>();
  v.coverage_ = meta.at("coverage").get<double>();

  std::string vocab_text = read_text_file(dir / "basic_vocab.tsv");
  for (const std::string& line : split(vocab_text, '\n')) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) fail("malformed basic vocab line: " + line);
    size_t id = static_cast<size_t>(std::stoull(cols[0]));
    if (id != v.id_to_word_.size()) fail("basic vocab ids not contiguous");
    v.id_to_word_.push_back(cols[1]);
    if (static_cast<i32>(id) > v.unk_id_) v.word_to_id_[cols[1]] = static_cast<i32>(id);
  }
  return v;
}

std::unique_ptr<TextCodec> load_codec(const std::filesystem::path& dir, const std::string& kind) {
  if (kind == "bpe") return std::make_unique<BpeCodec>(BpeCodec::load(dir));
  if (kind == "basic") return std::make_unique<BasicVocab>(BasicVocab::load(dir));
  fail("unknown codec kind: " + kind);
}

}  // namespace dlg
