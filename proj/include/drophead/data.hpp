#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace drophead {

// Reserved token ids; payload symbols start at kFirstSymbol.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kFirstSymbol = 3;

enum class TaskKind { copy, reverse, sort, keyword_classify };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct Example {
    std::vector<int> src;
    std::vector<int> tgt;  // [BOS, ..., EOS]; empty for classification
    int label = -1;        // classification only
};

struct Dataset {
    TaskKind kind = TaskKind::copy;
    int vocab = 32;
    int min_len = 5;
    int max_len = 16;
    int num_classes = 0;  // classification only
    std::uint64_t seed = 0;
    std::vector<Example> train, dev, test;

    bool is_classification() const { return kind == TaskKind::keyword_classify; }
};

// Uniformly random source sequences; target is the kind-defined transform
// framed with BOS/EOS. Splits share no source sequence.
Dataset gen_transduction(TaskKind kind, std::uint64_t seed, int vocab, int min_len, int max_len,
                         int n_train, int n_dev, int n_test);

// Class label = identity of the single planted keyword token; class-balanced.
Dataset gen_classification(std::uint64_t seed, int vocab, int min_len, int max_len, int n_train,
                           int n_dev, int n_test, int num_classes);

// Row-major padded index batch with validity masks.
struct Batch {
    std::size_t size = 0;
    std::size_t src_len = 0;
    std::size_t tgt_len = 0;
    std::vector<int> src;                // size * src_len, kPad-filled
    std::vector<std::uint8_t> src_valid;
    std::vector<int> tgt;                // size * tgt_len (transduction)
    std::vector<std::uint8_t> tgt_valid;
    std::vector<int> labels;             // classification

    std::vector<int> src_row(std::size_t i) const;
    std::vector<int> tgt_row(std::size_t i) const;
};

// Deterministic shuffle, then fixed-size padded batches.
std::vector<Batch> make_batches(const std::vector<Example>& examples, int batch_size,
                                std::uint64_t shuffle_seed);

// Line-oriented dump/load: space-separated indices, tab between src and
// tgt/label.
void dump_examples(const std::vector<Example>& examples, bool classification,
                   const std::string& path);
std::vector<Example> load_examples(const std::string& path, bool classification);

}  // namespace drophead
