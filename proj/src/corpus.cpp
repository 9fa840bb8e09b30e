#include "dlgforge/corpus.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace dlg {

using json = nlohmann::json;

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  fail("unknown split: " + s);
}

std::string split_to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  fail("bad split value");
}

std::vector<size_t> DialogueCorpus::split_indices(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < split_of.size(); ++i)
    if (split_of[i] == s) out.push_back(i);
  return out;
}

DialogueCorpus ingest_text(std::string_view text, char delimiter) {
  DialogueCorpus corpus;
  size_t start = 0;
  for (size_t i = 0; i <= text.size(); ++i) {
    if (i != text.size() && text[i] != '\n') continue;
    std::string_view line = text.substr(start, i - start);
    bool newline_terminated = i != text.size();
    start = i + 1;
    if (trim_view(line).empty()) {
      // A blank line in the file is malformed; the fragment after the final
      // newline is not a line at all.
      if (newline_terminated || !line.empty()) ++corpus.skipped_lines;
      continue;
    }
    Dialogue d;
    for (const std::string& field : split(line, delimiter)) {
      std::string utt = trim(field);
      if (!utt.empty()) d.utterances.push_back(std::move(utt));
    }
    if (d.utterances.size() < 2) {
      ++corpus.skipped_lines;
      continue;
    }
    corpus.dialogues.push_back(std::move(d));
  }
  if (corpus.dialogues.empty()) fail("empty corpus");
  return corpus;
}

DialogueCorpus ingest(const std::filesystem::path& path, char delimiter) {
  return ingest_text(read_text_file(path), delimiter);
}

void assign_splits(DialogueCorpus& corpus, u64 seed) {
  size_t n = corpus.dialogues.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(hash_mix({seed, 0x5B117ull}));
  for (size_t i = n; i > 1; --i) {
    size_t j = rng.uniform_u64(i);
    std::swap(idx[i - 1], idx[j]);
  }
  size_t n_train = n * 90 / 100;
  size_t n_valid = n * 5 / 100;
  corpus.split_of.assign(n, Split::test);
  for (size_t p = 0; p < n; ++p) {
    Split s = p < n_train ? Split::train : (p < n_train + n_valid ? Split::valid : Split::test);
    corpus.split_of[idx[p]] = s;
  }
}

std::vector<i32> render_dialogue(const Dialogue& d, const TextCodec& codec) {
  SpecialTokens sp = codec.specials();
  std::vector<i32> out;
  for (size_t i = 0; i < d.utterances.size(); ++i) {
    if (i > 0) out.push_back(sp.sep_utt);
    std::vector<i32> ids = codec.encode(d.utterances[i]);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  out.push_back(sp.eos);
  return out;
}

Assembler::Assembler(const DialogueCorpus& corpus, const TextCodec& codec, AssemblyConfig cfg)
    : corpus_(corpus), codec_(codec), cfg_(cfg), sp_(codec.specials()) {
  size_t n = corpus.dialogues.size();
  encoded_utts_.resize(n);
  utt_offsets_.resize(n);
  rendered_.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const Dialogue& d = corpus.dialogues[i];
    auto& flat = encoded_utts_[i];
    auto& offs = utt_offsets_[i];
    auto& rend = rendered_[i];
    for (size_t u = 0; u < d.utterances.size(); ++u) {
      std::vector<i32> ids = codec.encode(d.utterances[u]);
      offs.push_back(flat.size());
      flat.insert(flat.end(), ids.begin(), ids.end());
      if (u > 0) rend.push_back(sp_.sep_utt);
      rend.insert(rend.end(), ids.begin(), ids.end());
    }
    offs.push_back(flat.size());
    rend.push_back(sp_.eos);
  }
  by_split_.resize(3);
  if (!corpus.split_of.empty())
    for (int s = 0; s < 3; ++s) by_split_[s] = corpus.split_indices(static_cast<Split>(s));
}

bool Assembler::fits(size_t i) const {
  const auto& offs = utt_offsets_[i];
  size_t n_utts = offs.size() - 1;
  size_t resp_len = offs[n_utts] - offs[n_utts - 1];
  int overhead = cfg_.padding == PaddingMode::random ? 2 : 0;
  // response + EOS + trailing SEP_UTT + at least one context token
  return static_cast<int>(resp_len) + 1 + 1 + 1 + overhead <= cfg_.max_seq_len;
}

std::vector<i32> Assembler::pad_block(Split split, size_t target_index, size_t budget,
                                      Rng& rng) const {
  std::vector<i32> out;
  if (budget == 0) return out;
  const auto& pool = by_split_[static_cast<size_t>(split)];
  if (pool.size() < 2) fail("not enough dialogues for padding");
  while (out.size() < budget) {
    size_t j = pool[rng.uniform_u64(pool.size())];
    if (j == target_index) continue;
    const auto& stream = rendered_[j];
    size_t offset = rng.uniform_u64(stream.size());
    size_t take = std::min(budget - out.size(), stream.size() - offset);
    out.insert(out.end(), stream.begin() + static_cast<ptrdiff_t>(offset),
               stream.begin() + static_cast<ptrdiff_t>(offset + take));
  }
  return out;
}

TrainingExample Assembler::assemble(size_t target_index, Rng& rng) const {
  const int S = cfg_.max_seq_len;
  const auto& flat = encoded_utts_[target_index];
  const auto& offs = utt_offsets_[target_index];
  const size_t n_utts = offs.size() - 1;

  // Response is the final utterance; context is everything before it
  // (multi-turn) or just the immediately preceding utterance (single-turn).
  std::vector<i32> resp(flat.begin() + static_cast<ptrdiff_t>(offs[n_utts - 1]),
                        flat.begin() + static_cast<ptrdiff_t>(offs[n_utts]));
  size_t first_ctx = cfg_.turns == TurnScope::single ? n_utts - 2 : 0;

  const int overhead = cfg_.padding == PaddingMode::random ? 2 : 0;
  // Window left for context tokens after response, EOS and trailing SEP_UTT.
  const int ctx_budget = S - overhead - static_cast<int>(resp.size()) - 1 - 1;
  if (ctx_budget < 1) fail("response exceeds window");

  // Build the context token list, truncating from the oldest utterance
  // forward when it does not fit.
  std::vector<i32> ctx;
  for (size_t u = first_ctx; u + 1 < n_utts; ++u) {
    if (u > first_ctx) ctx.push_back(sp_.sep_utt);
    ctx.insert(ctx.end(), flat.begin() + static_cast<ptrdiff_t>(offs[u]),
               flat.begin() + static_cast<ptrdiff_t>(offs[u + 1]));
  }
  if (static_cast<int>(ctx.size()) > ctx_budget) {
    size_t drop = ctx.size() - static_cast<size_t>(ctx_budget);
    ctx.erase(ctx.begin(), ctx.begin() + static_cast<ptrdiff_t>(drop));
  }

  TrainingExample ex;
  ex.ids.reserve(static_cast<size_t>(S));
  ex.segments.reserve(static_cast<size_t>(S));
  auto emit = [&](i32 id, Segment seg) {
    ex.ids.push_back(id);
    ex.segments.push_back(static_cast<u8>(seg));
  };

  if (cfg_.padding == PaddingMode::random) {
    const size_t target_len = ctx.size() + 1 + resp.size() + 1;  // + SEP_UTT + EOS
    const size_t budget = static_cast<size_t>(S) - 2 - target_len;
    size_t before = rng.uniform_u64(budget + 1);
    size_t after = budget - before;
    Split split = corpus_.split_of.empty() ? Split::train : corpus_.split_of[target_index];
    for (i32 id : pad_block(split, target_index, before, rng)) emit(id, Segment::pad_before);
    emit(sp_.sep_pad, Segment::sep);
    for (i32 id : ctx) emit(id, Segment::context);
    emit(sp_.sep_utt, Segment::context);
    for (i32 id : resp) emit(id, Segment::response);
    emit(sp_.eos, Segment::response);
    emit(sp_.sep_pad, Segment::sep);
    for (i32 id : pad_block(split, target_index, after, rng)) emit(id, Segment::pad_after);
  } else {
    for (i32 id : ctx) emit(id, Segment::context);
    emit(sp_.sep_utt, Segment::context);
    for (i32 id : resp) emit(id, Segment::response);
    emit(sp_.eos, Segment::response);
    while (ex.ids.size() < static_cast<size_t>(S)) emit(sp_.pad, Segment::static_pad);
  }

  ex.loss_mask.resize(ex.ids.size());
  for (size_t t = 0; t < ex.ids.size(); ++t) {
    auto seg = static_cast<Segment>(ex.segments[t]);
    bool on = cfg_.loss == LossMode::joint ? seg != Segment::static_pad
                                           : seg == Segment::response;
    ex.loss_mask[t] = on ? 1 : 0;
  }
  return ex;
}

TrainingExample assemble_example(const DialogueCorpus& corpus, const TextCodec& codec,
                                 size_t target_index, const AssemblyConfig& cfg, u64 rng_seed) {
  Assembler assembler(corpus, codec, cfg);
  Rng rng(rng_seed);
  return assembler.assemble(target_index, rng);
}

ExampleStream::ExampleStream(const DialogueCorpus& corpus, const TextCodec& codec,
                             AssemblyConfig cfg, Split split, int batch_size, u64 seed)
    : assembler_(corpus, codec, cfg), split_(split), batch_size_(batch_size), seed_(seed) {
  std::vector<size_t> pool = corpus.split_indices(split);
  for (size_t i : pool) {
    if (assembler_.fits(i))
      order_.push_back(i);
    else
      ++skipped_;
  }
  if (order_.empty()) fail("empty corpus");
  Rng rng(hash_mix({seed, 0x04DE4ull}));
  for (size_t i = order_.size(); i > 1; --i) {
    size_t j = rng.uniform_u64(i);
    std::swap(order_[i - 1], order_[j]);
  }
}

size_t ExampleStream::batches_per_epoch() const {
  return (order_.size() + static_cast<size_t>(batch_size_) - 1) / static_cast<size_t>(batch_size_);
}

Batch ExampleStream::batch(size_t global_batch_index) const {
  const size_t bpe = batches_per_epoch();
  const size_t epoch = global_batch_index / bpe;
  const size_t bi = global_batch_index % bpe;
  const size_t lo = bi * static_cast<size_t>(batch_size_);
  const size_t hi = std::min(order_.size(), lo + static_cast<size_t>(batch_size_));

  Batch b;
  b.batch_size = static_cast<int>(hi - lo);
  b.seq_len = assembler_.config().max_seq_len;
  for (size_t p = lo; p < hi; ++p) {
    size_t target = order_[p];
    Rng rng(hash_mix({seed_, 0xBA7C4ull, epoch, p}));
    TrainingExample ex = assembler_.assemble(target, rng);
    b.ids.insert(b.ids.end(), ex.ids.begin(), ex.ids.end());
    b.segments.insert(b.segments.end(), ex.segments.begin(), ex.segments.end());
    b.loss_mask.insert(b.loss_mask.end(), ex.loss_mask.begin(), ex.loss_mask.end());
    b.dialogue_indices.push_back(target);
  }
  return b;
}

void write_example_cache(const std::filesystem::path& path, const std::vector<TrainingExample>& examples,
                         const AssemblyConfig& cfg, u64 vocab_hash, u64 seed, Split split) {
  json manifest;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(vocab_hash));
  manifest["vocab_hash"] = hex;
  manifest["max_seq_len"] = cfg.max_seq_len;
  manifest["padding"] = cfg.padding == PaddingMode::random ? "random" : "static";
  manifest["loss"] = cfg.loss == LossMode::joint ? "joint" : "conditional";
  manifest["turns"] = cfg.turns == TurnScope::multi ? "multi" : "single";
  manifest["count"] = examples.size();
  manifest["seed"] = seed;
  manifest["split"] = split_to_string(split);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write file: " + path.string());
  std::string header = manifest.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  for (const TrainingExample& ex : examples) {
    out.write(reinterpret_cast<const char*>(ex.ids.data()),
              static_cast<std::streamsize>(ex.ids.size() * sizeof(i32)));
    out.write(reinterpret_cast<const char*>(ex.segments.data()),
              static_cast<std::streamsize>(ex.segments.size()));
    out.write(reinterpret_cast<const char*>(ex.loss_mask.data()),
              static_cast<std::streamsize>(ex.loss_mask.size()));
  }
  if (!out) fail("write failed: " + path.string());
}

std::vector<TrainingExample> read_example_cache(const std::filesystem::path& path,
                                                u64 expected_vocab_hash, AssemblyConfig* cfg_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file: " + path.string());
  std::string header;
  if (!std::getline(in, header)) fail("missing cache manifest");
  json manifest = json::parse(header);

  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(expected_vocab_hash));
  if (manifest.at("vocab_hash").get<std::string>() != hex) fail("vocab mismatch");

  AssemblyConfig cfg;
  cfg.max_seq_len = manifest.at("max_seq_len").get<int>();
  cfg.padding = manifest.at("padding").get<std::string>() == "random" ? PaddingMode::random
                                                                      : PaddingMode::static_fill;
  cfg.loss = manifest.at("loss").get<std::string>() == "joint" ? LossMode::joint
                                                               : LossMode::conditional;
  cfg.turns = manifest.at("turns").get<std::string>() == "multi" ? TurnScope::multi
                                                                 : TurnScope::single;
  if (cfg_out) *cfg_out = cfg;

  size_t count = manifest.at("count").get<size_t>();
  size_t S = static_cast<size_t>(cfg.max_seq_len);
  std::vector<TrainingExample> out(count);
  for (TrainingExample& ex : out) {
    ex.ids.resize(S);
    ex.segments.resize(S);
    ex.loss_mask.resize(S);
    in.read(reinterpret_cast<char*>(ex.ids.data()), static_cast<std::streamsize>(S * sizeof(i32)));
    in.read(reinterpret_cast<char*>(ex.segments.data()), static_cast<std::streamsize>(S));
    in.read(reinterpret_cast<char*>(ex.loss_mask.data()), static_cast<std::streamsize>(S));
    if (!in) fail("truncated cache file: " + path.string());
  }
  return out;
}

}  // namespace dlg
