#include "drophead/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "drophead/rng.hpp"

namespace drophead {

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::sort: return "sort";
        case TaskKind::keyword_classify: return "keyword_classify";
    }
    throw std::logic_error("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "copy") return TaskKind::copy;
    if (s == "reverse") return TaskKind::reverse;
    if (s == "sort") return TaskKind::sort;
    if (s == "keyword_classify") return TaskKind::keyword_classify;
    throw std::invalid_argument("unknown task kind: " + s);
}

namespace {

std::vector<int> transform_target(TaskKind kind, const std::vector<int>& src) {
    std::vector<int> payload = src;
    switch (kind) {
        case TaskKind::copy: break;
        case TaskKind::reverse: std::reverse(payload.begin(), payload.end()); break;
        case TaskKind::sort: std::sort(payload.begin(), payload.end()); break;
        case TaskKind::keyword_classify:
            throw std::logic_error("transform_target: not a transduction task");
    }
    std::vector<int> tgt;
    tgt.reserve(payload.size() + 2);
    tgt.push_back(kBos);
    tgt.insert(tgt.end(), payload.begin(), payload.end());
    tgt.push_back(kEos);
    return tgt;
}

// Draws a fresh source sequence not seen before; sequences are unique across
// the whole dataset so splits are disjoint by construction.
std::vector<int> draw_unique_src(RngStream& rng, int vocab, int min_len, int max_len,
                                 std::set<std::vector<int>>& seen,
                                 const std::vector<int>* symbol_pool = nullptr) {
    const int n_symbols = vocab - kFirstSymbol;
    for (int attempt = 0; attempt < 100000; ++attempt) {
        const int len =
            min_len + static_cast<int>(rng.next_below(
                          static_cast<std::uint64_t>(max_len - min_len + 1)));
        std::vector<int> src(len);
        for (int i = 0; i < len; ++i) {
            if (symbol_pool) {
                src[i] = (*symbol_pool)[rng.next_below(symbol_pool->size())];
            } else {
                src[i] = kFirstSymbol + static_cast<int>(rng.next_below(
                                            static_cast<std::uint64_t>(n_symbols)));
            }
        }
        if (seen.insert(src).second) return src;
    }
    throw std::runtime_error("dataset: sequence space exhausted; enlarge vocab or lengths");
}

}  // namespace

Dataset gen_transduction(TaskKind kind, std::uint64_t seed, int vocab, int min_len, int max_len,
                         int n_train, int n_dev, int n_test) {
    if (kind == TaskKind::keyword_classify) {
        throw std::invalid_argument("gen_transduction: use gen_classification");
    }
    if (vocab < kFirstSymbol + 1) {
        throw std::invalid_argument("gen_transduction: vocab must be >= " +
                                    std::to_string(kFirstSymbol + 1) +
                                    " (pad/bos/eos reserved), got " + std::to_string(vocab));
    }
    if (min_len < 1 || max_len < min_len) {
        throw std::invalid_argument("gen_transduction: bad length range");
    }
    if (n_train < 1 || n_dev < 0 || n_test < 0) {
        throw std::invalid_argument("gen_transduction: split sizes must be positive");
    }
    Dataset ds;
    ds.kind = kind;
    ds.vocab = vocab;
    ds.min_len = min_len;
    ds.max_len = max_len;
    ds.seed = seed;
    std::set<std::vector<int>> seen;
    int split_idx = 0;
    for (auto* split : {&ds.train, &ds.dev, &ds.test}) {
        RngStream rng(seed, static_cast<std::uint64_t>(split_idx), 0, 0, stream_tag::dataset);
        const int n = split_idx == 0 ? n_train : (split_idx == 1 ? n_dev : n_test);
        for (int i = 0; i < n; ++i) {
            Example ex;
            ex.src = draw_unique_src(rng, vocab, min_len, max_len, seen);
            ex.tgt = transform_target(kind, ex.src);
            split->push_back(std::move(ex));
        }
        ++split_idx;
    }
    return ds;
}

Dataset gen_classification(std::uint64_t seed, int vocab, int min_len, int max_len, int n_train,
                           int n_dev, int n_test, int num_classes) {
    const int n_symbols = vocab - kFirstSymbol;
    if (num_classes < 2 || num_classes >= n_symbols) {
        throw std::invalid_argument(
            "gen_classification: need 2 <= num_classes < available symbols, got " +
            std::to_string(num_classes) + " classes for " + std::to_string(n_symbols) +
            " symbols");
    }
    for (int n : {n_train, n_dev, n_test}) {
        if (n % num_classes != 0) {
            throw std::invalid_argument(
                "gen_classification: split sizes must be divisible by num_classes for exact "
                "balance");
        }
    }
    if (min_len < 1 || max_len < min_len) {
        throw std::invalid_argument("gen_classification: bad length range");
    }
    Dataset ds;
    ds.kind = TaskKind::keyword_classify;
    ds.vocab = vocab;
    ds.min_len = min_len;
    ds.max_len = max_len;
    ds.num_classes = num_classes;
    ds.seed = seed;
    // Keywords are the first num_classes symbols; distractors come from the rest.
    std::vector<int> distractors;
    for (int s = kFirstSymbol + num_classes; s < vocab; ++s) distractors.push_back(s);
    std::set<std::vector<int>> seen;
    int split_idx = 0;
    for (auto* split : {&ds.train, &ds.dev, &ds.test}) {
        RngStream rng(seed, static_cast<std::uint64_t>(split_idx), 0, 0, stream_tag::dataset);
        const int n = split_idx == 0 ? n_train : (split_idx == 1 ? n_dev : n_test);
        std::vector<Example> split_examples;
        for (int cls = 0; cls < num_classes; ++cls) {
            for (int i = 0; i < n / num_classes; ++i) {
                std::vector<int> src;
                for (int attempt = 0;; ++attempt) {
                    if (attempt >= 100000) {
                        throw std::runtime_error("dataset: sequence space exhausted");
                    }
                    const int len = min_len +
                                    static_cast<int>(rng.next_below(
                                        static_cast<std::uint64_t>(max_len - min_len + 1)));
                    src.assign(len, 0);
                    for (int j = 0; j < len; ++j)
                        src[j] = distractors[rng.next_below(distractors.size())];
                    src[rng.next_below(static_cast<std::uint64_t>(len))] = kFirstSymbol + cls;
                    if (seen.insert(src).second) break;
                }
                Example ex;
                ex.src = std::move(src);
                ex.label = cls;
                split_examples.push_back(std::move(ex));
            }
        }
        // Interleave classes deterministically so batches stay mixed.
        RngStream shuffle_rng(seed, static_cast<std::uint64_t>(split_idx), 1, 0,
                              stream_tag::dataset);
        for (std::size_t i = split_examples.size(); i > 1; --i) {
            std::swap(split_examples[i - 1], split_examples[shuffle_rng.next_below(i)]);
        }
        *split = std::move(split_examples);
        ++split_idx;
    }
    return ds;
}

std::vector<int> Batch::src_row(std::size_t i) const {
    std::vector<int> row;
    for (std::size_t j = 0; j < src_len; ++j) {
        if (!src_valid[i * src_len + j]) break;
        row.push_back(src[i * src_len + j]);
    }
    return row;
}

std::vector<int> Batch::tgt_row(std::size_t i) const {
    std::vector<int> row;
    for (std::size_t j = 0; j < tgt_len; ++j) {
        if (!tgt_valid[i * tgt_len + j]) break;
        row.push_back(tgt[i * tgt_len + j]);
    }
    return row;
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, int batch_size,
                                std::uint64_t shuffle_seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size >= 1");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream rng(shuffle_seed, 0, 0, 0, stream_tag::shuffle);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.next_below(i)]);
    }
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        Batch b;
        b.size = end - start;
        for (std::size_t i = start; i < end; ++i) {
            const Example& ex = examples[order[i]];
            b.src_len = std::max(b.src_len, ex.src.size());
            b.tgt_len = std::max(b.tgt_len, ex.tgt.size());
        }
        b.src.assign(b.size * b.src_len, kPad);
        b.src_valid.assign(b.size * b.src_len, 0);
        if (b.tgt_len > 0) {
            b.tgt.assign(b.size * b.tgt_len, kPad);
            b.tgt_valid.assign(b.size * b.tgt_len, 0);
        }
        for (std::size_t i = start; i < end; ++i) {
            const Example& ex = examples[order[i]];
            const std::size_t r = i - start;
            for (std::size_t j = 0; j < ex.src.size(); ++j) {
                b.src[r * b.src_len + j] = ex.src[j];
                b.src_valid[r * b.src_len + j] = 1;
            }
            for (std::size_t j = 0; j < ex.tgt.size(); ++j) {
                b.tgt[r * b.tgt_len + j] = ex.tgt[j];
                b.tgt_valid[r * b.tgt_len + j] = 1;
            }
            b.labels.push_back(ex.label);
        }
        out.push_back(std::move(b));
    }
    return out;
}

void dump_examples(const std::vector<Example>& examples, bool classification,
                   const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("dump_examples: cannot open " + path);
    for (const Example& ex : examples) {
        for (std::size_t i = 0; i < ex.src.size(); ++i) {
            if (i) f << ' ';
            f << ex.src[i];
        }
        f << '\t';
        if (classification) {
            f << ex.label;
        } else {
            for (std::size_t i = 0; i < ex.tgt.size(); ++i) {
                if (i) f << ' ';
                f << ex.tgt[i];
            }
        }
        f << '\n';
    }
}

std::vector<Example> load_examples(const std::string& path, bool classification) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_examples: cannot open " + path);
    std::vector<Example> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("load_examples: malformed line (no tab): " + line);
        }
        Example ex;
        std::istringstream src_ss(line.substr(0, tab));
        int tok;
        while (src_ss >> tok) ex.src.push_back(tok);
        std::istringstream rest_ss(line.substr(tab + 1));
        if (classification) {
            rest_ss >> ex.label;
        } else {
            while (rest_ss >> tok) ex.tgt.push_back(tok);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace drophead
