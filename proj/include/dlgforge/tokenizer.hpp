#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dlgforge/common.hpp"

namespace dlg {

/// Resolved ids of the reserved tokens every codec provides.
struct SpecialTokens {
  i32 eos = -1;      // end of response
  i32 sep_utt = -1;  // separator between utterances
  i32 sep_pad = -1;  // separator between padding block and conversation
  i32 pad = -1;      // static padding filler
};

/// Common surface of the BPE codec and the basic word vocabulary, so corpus
/// assembly, generation and the entropy tool can run on either.
class TextCodec {
 public:
  virtual ~TextCodec() = default;
  virtual std::vector<i32> encode(std::string_view text) const = 0;
  virtual std::string decode(const std::vector<i32>& ids) const = 0;
  virtual int vocab_size() const = 0;
  virtual SpecialTokens specials() const = 0;
  virtual u64 vocab_hash() const = 0;
  virtual std::string kind() const = 0;
};

/// Byte-level BPE codec: 256 base byte symbols, reserved special tokens and a
/// learned merge table. decode(encode(s)) == s for every UTF-8 string.
class BpeCodec final : public TextCodec {
 public:
  static constexpr int kByteAlphabet = 256;

  static const std::vector<std::string>& default_special_names();

  /// Learns merges greedily by pair frequency (ties: lexicographically
  /// smaller left symbol, then right). Stops early if no pairs remain.
  static BpeCodec train(std::string_view corpus, int target_vocab_size,
                        const std::vector<std::string>& special_names = default_special_names());

  std::vector<i32> encode(std::string_view text) const override;
  std::string decode(const std::vector<i32>& ids) const override;
  int vocab_size() const override { return static_cast<int>(symbols_.size()); }
  SpecialTokens specials() const override;
  u64 vocab_hash() const override;
  std::string kind() const override { return "bpe"; }

  i32 special_id(const std::string& name) const;
  bool is_special(i32 id) const { return special_flag_[static_cast<size_t>(id)]; }
  const std::vector<std::pair<i32, i32>>& merges() const { return merges_; }
  const std::string& symbol(i32 id) const { return symbols_[static_cast<size_t>(id)]; }
  int num_specials() const { return static_cast<int>(special_names_.size()); }

  void save(const std::filesystem::path& dir) const;
  static BpeCodec load(const std::filesystem::path& dir);

  /// Splits text at whitespace boundaries; each whitespace run attaches to
  /// the following word so merges never cross word boundaries.
  static std::vector<std::string_view> pre_segment(std::string_view text);

 private:
  BpeCodec() = default;
  void init_base(const std::vector<std::string>& special_names);
  std::vector<i32> encode_chunk(std::string_view chunk) const;
  std::string serialize_vocab() const;
  std::string serialize_merges() const;

  std::vector<std::string> symbols_;        // id -> bytes (specials: display name)
  std::vector<bool> special_flag_;          // id -> is reserved
  std::vector<std::string> special_names_;  // in reserved order starting at id 256
  std::vector<std::pair<i32, i32>> merges_;  // rank -> (left id, right id)
  std::unordered_map<u64, std::pair<i32, i32>> merge_lookup_;  // pair key -> (rank, merged id)
  std::unordered_map<std::string, i32> symbol_to_id_;
};

/// Word-level vocabulary with an out-of-vocabulary token, for the
/// tokenization-coverage ablation. Lowercases and splits on whitespace.
class BasicVocab final : public TextCodec {
 public:
  static BasicVocab build(std::string_view corpus, int min_frequency,
                          const std::vector<std::string>& special_names =
                              BpeCodec::default_special_names());

  std::vector<i32> encode(std::string_view text) const override;
  std::string decode(const std::vector<i32>& ids) const override;
  int vocab_size() const override { return static_cast<int>(id_to_word_.size()); }
  SpecialTokens specials() const override;
  u64 vocab_hash() const override;
  std::string kind() const override { return "basic"; }

  i32 unk_id() const { return unk_id_; }
  /// Fraction of training-split token occurrences not mapped to UNK.
  double coverage() const { return coverage_; }
  int min_frequency() const { return min_frequency_; }
  bool is_special(i32 id) const { return id < unk_id_; }

  void save(const std::filesystem::path& dir) const;
  static BasicVocab load(const std::filesystem::path& dir);

 private:
  std::vector<std::string> special_names_;
  std::vector<std::string> id_to_word_;  // specials, then UNK, then words
  std::unordered_map<std::string, i32> word_to_id_;
  i32 unk_id_ = -1;
  double coverage_ = 0.0;
  int min_frequency_ = 1;
};

/// Loads a codec of the given kind ("bpe" | "basic") from a codec directory.
std::unique_ptr<TextCodec> load_codec(const std::filesystem::path& dir, const std::string& kind);

/// Escape scheme for symbol bytes in the merges/vocab files: printable ASCII
/// stays literal, backslash doubles, everything else becomes \xHH.
std::string escape_symbol(std::string_view bytes);
std::string unescape_symbol(std::string_view text);

}  // namespace dlg
