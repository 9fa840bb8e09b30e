#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlgforge/common.hpp"
#include "dlgforge/tokenizer.hpp"

namespace dlg {

/// One conversation: ordered utterances, at least a context turn and a
/// response turn.
struct Dialogue {
  std::vector<std::string> utterances;
};

enum class Split : u8 { train = 0, valid = 1, test = 2 };

Split split_from_string(const std::string& s);
std::string split_to_string(Split s);

struct DialogueCorpus {
  std::vector<Dialogue> dialogues;
  std::vector<Split> split_of;  // filled by assign_splits
  size_t skipped_lines = 0;

  std::vector<size_t> split_indices(Split s) const;
};

/// Reads one dialogue per line, utterances separated by `delimiter`. Lines
/// with fewer than two non-empty utterances are skipped and counted.
DialogueCorpus ingest(const std::filesystem::path& path, char delimiter = '\t');
DialogueCorpus ingest_text(std::string_view text, char delimiter = '\t');

/// Deterministic 90/5/5 assignment: seeded shuffle, then contiguous cuts.
void assign_splits(DialogueCorpus& corpus, u64 seed);

enum class PaddingMode : u8 { random = 0, static_fill = 1 };
enum class LossMode : u8 { joint = 0, conditional = 1 };
enum class TurnScope : u8 { multi = 0, single = 1 };

struct AssemblyConfig {
  PaddingMode padding = PaddingMode::random;
  LossMode loss = LossMode::joint;
  TurnScope turns = TurnScope::multi;
  int max_seq_len = 64;
};

enum class Segment : u8 {
  pad_before = 0,
  sep = 1,
  context = 2,
  response = 3,
  pad_after = 4,
  static_pad = 5,
};

/// Fixed-width training window: token ids, per-token segment labels and the
/// 0/1 loss mask. All three have length exactly max_seq_len.
struct TrainingExample {
  std::vector<i32> ids;
  std::vector<u8> segments;
  std::vector<u8> loss_mask;
};

/// Token stream of a whole dialogue:
/// u_0 SEP_UTT u_1 SEP_UTT ... SEP_UTT u_{N-1} EOS.
std::vector<i32> render_dialogue(const Dialogue& d, const TextCodec& codec);

/// Pre-renders every dialogue once; the per-example assembly then only moves
/// token spans around.
class Assembler {
 public:
  Assembler(const DialogueCorpus& corpus, const TextCodec& codec, AssemblyConfig cfg);

  TrainingExample assemble(size_t target_index, Rng& rng) const;

  /// True when the dialogue's response plus fixed overhead fits the window.
  bool fits(size_t dialogue_index) const;

  const AssemblyConfig& config() const { return cfg_; }
  const DialogueCorpus& corpus() const { return corpus_; }
  const std::vector<i32>& rendered(size_t i) const { return rendered_[i]; }

 private:
  const DialogueCorpus& corpus_;
  const TextCodec& codec_;
  AssemblyConfig cfg_;
  SpecialTokens sp_;
  std::vector<std::vector<i32>> encoded_utts_;  // flattened per dialogue
  std::vector<std::vector<size_t>> utt_offsets_;
  std::vector<std::vector<i32>> rendered_;  // whole-dialogue streams for padding
  std::vector<std::vector<size_t>> by_split_;

  std::vector<i32> pad_block(Split split, size_t target_index, size_t budget, Rng& rng) const;
};

/// Convenience single-example entry point (renders the corpus on each call;
/// use Assembler/ExampleStream for anything hot).
TrainingExample assemble_example(const DialogueCorpus& corpus, const TextCodec& codec,
                                 size_t target_index, const AssemblyConfig& cfg, u64 rng_seed);

struct Batch {
  int batch_size = 0;
  int seq_len = 0;
  std::vector<i32> ids;       // [batch_size, seq_len]
  std::vector<u8> segments;   // [batch_size, seq_len]
  std::vector<u8> loss_mask;  // [batch_size, seq_len]
  std::vector<size_t> dialogue_indices;
};

/// Deterministic, stateless batch source. Target order is a fixed seeded
/// permutation of the split; padding chunks are re-sampled every epoch from
/// (seed, epoch, position). batch(i) for any global index i is random access,
/// so a resumed run replays the identical stream.
class ExampleStream {
 public:
  ExampleStream(const DialogueCorpus& corpus, const TextCodec& codec, AssemblyConfig cfg,
                Split split, int batch_size, u64 seed);

  size_t examples_per_epoch() const { return order_.size(); }
  size_t batches_per_epoch() const;
  size_t skipped_too_long() const { return skipped_; }
  Batch batch(size_t global_batch_index) const;
  const Assembler& assembler() const { return assembler_; }

 private:
  Assembler assembler_;
  Split split_;
  int batch_size_;
  u64 seed_;
  std::vector<size_t> order_;
  size_t skipped_ = 0;
};

/// Assembled-example cache: one-line JSON manifest, then fixed-width arrays
/// (i32 ids, u8 segments, u8 mask per example).
void write_example_cache(const std::filesystem::path& path, const std::vector<TrainingExample>& examples,
                         const AssemblyConfig& cfg, u64 vocab_hash, u64 seed, Split split);
std::vector<TrainingExample> read_example_cache(const std::filesystem::path& path, u64 expected_vocab_hash,
                                                AssemblyConfig* cfg_out = nullptr);

}  // namespace dlg
