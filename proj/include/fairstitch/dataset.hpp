#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fairstitch/errors.hpp"
#include "fairstitch/fairness.hpp"
#include "fairstitch/rng.hpp"
#include "fairstitch/tensor.hpp"

namespace fairstitch {

// ============================================================================
// Triplet datasets (features x, sensitive attribute a, label y), CSV
// ingestion, a deterministic synthetic biased generator, splits, and the
// class-and-attribute balanced subsample. Datasets are immutable after
// construction; every randomized operation is a pure function of
// (input, seed).
// ============================================================================

struct TripletDataset {
    Tensor x; // m x d
    std::vector<int> a;
    std::vector<int> y;
    std::string name;

    std::size_t size() const { return x.rows; }
    std::size_t dim() const { return x.cols; }
};

inline void check_dataset(const TripletDataset& ds) {
    if (ds.a.size() != ds.x.rows || ds.y.size() != ds.x.rows) {
        throw ShapeError("dataset '" + ds.name + "': length mismatch: x has " +
                         std::to_string(ds.x.rows) + " rows, a has " +
                         std::to_string(ds.a.size()) + ", y has " +
                         std::to_string(ds.y.size()));
    }
    if (!ds.x.all_finite()) {
        throw ParseError("dataset '" + ds.name + "': non-finite feature value");
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if ((ds.a[i] != 0 && ds.a[i] != 1) || (ds.y[i] != 0 && ds.y[i] != 1)) {
            throw ParseError("dataset '" + ds.name + "': non-binary a/y at row " +
                             std::to_string(i));
        }
    }
}

struct CellCounts {
    std::array<std::size_t, 4> counts{}; // cell_index order: (0,0),(0,1),(1,0),(1,1)

    std::size_t total() const {
        return counts[0] + counts[1] + counts[2] + counts[3];
    }
    std::size_t min_cell() const {
        return *std::min_element(counts.begin(), counts.end());
    }
};

inline CellCounts cell_counts(const TripletDataset& ds) {
    CellCounts cc;
    for (std::size_t i = 0; i < ds.size(); ++i) cc.counts[cell_index(ds.y[i], ds.a[i])]++;
    return cc;
}

inline TripletDataset take_rows(const TripletDataset& ds, std::span<const std::size_t> idx,
                                std::string name) {
    TripletDataset out;
    out.name = std::move(name);
    out.x = Tensor(idx.size(), ds.dim());
    out.a.reserve(idx.size());
    out.y.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::size_t src = idx[r];
        std::copy(ds.x.data.begin() + src * ds.dim(), ds.x.data.begin() + (src + 1) * ds.dim(),
                  out.x.data.begin() + r * ds.dim());
        out.a.push_back(ds.a[src]);
        out.y.push_back(ds.y[src]);
    }
    return out;
}

inline TripletDataset concat(const TripletDataset& first, const TripletDataset& second,
                             std::string name) {
    if (first.dim() != second.dim()) {
        throw ShapeError("concat: feature dims disagree: " + std::to_string(first.dim()) +
                         " vs " + std::to_string(second.dim()));
    }
    TripletDataset out;
    out.name = std::move(name);
    out.x = Tensor(first.size() + second.size(), first.dim());
    std::copy(first.x.data.begin(), first.x.data.end(), out.x.data.begin());
    std::copy(second.x.data.begin(), second.x.data.end(),
              out.x.data.begin() + first.x.data.size());
    out.a = first.a;
    out.a.insert(out.a.end(), second.a.begin(), second.a.end());
    out.y = first.y;
    out.y.insert(out.y.end(), second.y.begin(), second.y.end());
    return out;
}

// ---------------------------------------------------------------------------
// CSV round trip. Header: f0,...,f{d-1},a,y. Features are written with 17
// significant digits so load(save(ds)) is bit-exact.
// ---------------------------------------------------------------------------

inline void save_csv(const TripletDataset& ds, const std::filesystem::path& path) {
    check_dataset(ds);
    std::ofstream out(path);
    if (!out) throw IoError("save_csv: cannot open '" + path.string() + "' for writing");
    for (std::size_t c = 0; c < ds.dim(); ++c) out << "f" << c << ",";
    out << "a,y\n";
    char buf[40];
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t c = 0; c < ds.dim(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.x.at(r, c));
            out << buf << ",";
        }
        out << ds.a[r] << "," << ds.y[r] << "\n";
    }
    if (!out) throw IoError("save_csv: write failed for '" + path.string() + "'");
}

inline TripletDataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_csv: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("load_csv: '" + path.string() + "' is empty");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    std::stringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) header.push_back(col);
    if (header.size() < 3) {
        throw ParseError("load_csv: '" + path.string() +
                         "' header needs at least one feature column plus a,y; got '" + line +
                         "'");
    }
    const std::size_t d = header.size() - 2;
    for (std::size_t c = 0; c < d; ++c) {
        if (header[c] != "f" + std::to_string(c)) {
            throw ParseError("load_csv: '" + path.string() + "' header column " +
                             std::to_string(c + 1) + " is '" + header[c] + "', expected 'f" +
                             std::to_string(c) + "'");
        }
    }
    if (header[d] != "a" || header[d + 1] != "y") {
        throw ParseError("load_csv: '" + path.string() +
                         "' header must end with columns a,y");
    }

    TripletDataset ds;
    ds.name = path.stem().string();
    std::vector<double> features;
    std::size_t line_no = 1;
    auto parse_binary = [&](const std::string& field, const char* what) -> int {
        if (field == "0") return 0;
        if (field == "1") return 1;
        throw ParseError("load_csv: '" + path.string() + "' " + what + " value \"" + field +
                         "\" at row " + std::to_string(line_no) + " is not 0/1");
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::vector<std::string> fields;
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.push_back("");
        if (fields.size() != d + 2) {
            throw ParseError("load_csv: '" + path.string() + "' row " +
                             std::to_string(line_no) + " has " +
                             std::to_string(fields.size()) + " columns, expected " +
                             std::to_string(d + 2));
        }
        for (std::size_t c = 0; c < d; ++c) {
            const std::string& f = fields[c];
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw ParseError("load_csv: '" + path.string() + "' non-numeric feature \"" +
                                 f + "\" at row " + std::to_string(line_no) + " column f" +
                                 std::to_string(c));
            }
            features.push_back(v);
        }
        ds.a.push_back(parse_binary(fields[d], "a"));
        ds.y.push_back(parse_binary(fields[d + 1], "y"));
    }
    ds.x = Tensor(ds.a.size(), d, std::move(features));
    check_dataset(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic biased generator. Each row draws its (y,a) cell from
// cell_probs, then x ~ Normal(mu(y,a), I_d) with
//   mu = delta*y*e1 + gamma*a*e2 + (gamma*delta/2)*y*a*e3.
// The interaction term makes group-conditional decision boundaries differ.
// Emitted labels are flipped with probability label_noise.
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t n = 20000;
    std::size_t d = 8;
    std::array<double, 4> cell_probs{0.45, 0.45, 0.05, 0.05}; // cell_index order
    double class_separation = 2.0;  // delta
    double attribute_shift = 1.5;   // gamma
    double label_noise = 0.05;      // epsilon
    std::uint64_t seed = 7;
};

inline void validate_synth_spec(const SynthSpec& spec) {
    if (spec.n < 1) throw ConfigError("synth.n: must be >= 1");
    if (spec.d < 3) {
        throw ConfigError("synth.d: must be >= 3 (mean shifts use the first three features)");
    }
    double sum = 0.0;
    for (double pr : spec.cell_probs) {
        if (!(pr > 0.0)) throw ConfigError("synth.cell_probs: every cell must be > 0");
        sum += pr;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("synth.cell_probs: must sum to 1, got " + std::to_string(sum));
    }
    if (spec.label_noise < 0.0 || spec.label_noise > 1.0) {
        throw ConfigError("synth.label_noise: must be in [0,1]");
    }
}

inline TripletDataset synth_biased(const SynthSpec& spec) {
    validate_synth_spec(spec);
    Rng rng(derive_seed(spec.seed, seed_tag::synth));
    std::array<double, 4> cumulative{};
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        acc += spec.cell_probs[i];
        cumulative[i] = acc;
    }
    cumulative[3] = 1.0;

    TripletDataset ds;
    ds.name = "synthetic";
    ds.x = Tensor(spec.n, spec.d);
    ds.a.reserve(spec.n);
    ds.y.reserve(spec.n);
    const double delta = spec.class_separation;
    const double gamma = spec.attribute_shift;
    for (std::size_t r = 0; r < spec.n; ++r) {
        const double u = rng.uniform();
        std::size_t cell = 0;
        while (cell < 3 && u >= cumulative[cell]) ++cell;
        const int y_true = static_cast<int>(cell / 2);
        const int attr = static_cast<int>(cell % 2);
        for (std::size_t c = 0; c < spec.d; ++c) ds.x.at(r, c) = rng.normal();
        ds.x.at(r, 0) += delta * y_true;
        ds.x.at(r, 1) += gamma * attr;
        ds.x.at(r, 2) += (gamma * delta / 2.0) * y_true * attr;
        const bool flip = rng.uniform() < spec.label_noise;
        ds.a.push_back(attr);
        ds.y.push_back(flip ? 1 - y_true : y_true);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Balanced subsample: pool train+val, find the minority (y,a) cell count c,
// and draw exactly c rows per cell without replacement.
// ---------------------------------------------------------------------------

inline TripletDataset balanced_subsample(const TripletDataset& train, const TripletDataset& val,
                                         std::uint64_t seed) {
    const TripletDataset pool = concat(train, val, "pool");
    std::array<std::vector<std::size_t>, 4> cells;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        cells[cell_index(pool.y[i], pool.a[i])].push_back(i);
    }
    std::size_t c = pool.size();
    for (std::size_t idx = 0; idx < 4; ++idx) {
        if (cells[idx].empty()) {
            throw EmptyGroupError(std::string("balanced_subsample: empty cell ") +
                                  cell_name(idx) + " in pooled train+val");
        }
        c = std::min(c, cells[idx].size());
    }
    Rng rng(derive_seed(seed, seed_tag::balanced));
    std::vector<std::size_t> selected;
    selected.reserve(4 * c);
    for (auto& cell : cells) {
        // partial Fisher-Yates: the first c entries are a uniform sample
        for (std::size_t i = 0; i < c; ++i) {
            const std::size_t j = i + rng.below(cell.size() - i);
            std::swap(cell[i], cell[j]);
        }
        std::sort(cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(c));
        selected.insert(selected.end(), cell.begin(),
                        cell.begin() + static_cast<std::ptrdiff_t>(c));
    }
    return take_rows(pool, selected, "balanced");
}

// ---------------------------------------------------------------------------
// Splits with largest-remainder rounding; optionally stratified per cell.
// ---------------------------------------------------------------------------

struct SplitFractions {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

namespace detail_split {

// Largest-remainder apportionment of n into parts proportional to fractions;
// remainder ties break toward the lowest index.
inline std::vector<std::size_t> apportion(std::size_t n, std::span<const double> fractions) {
    std::vector<std::size_t> sizes(fractions.size());
    std::vector<double> remainders(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double quota = static_cast<double>(n) * fractions[i];
        sizes[i] = static_cast<std::size_t>(quota);
        remainders[i] = quota - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::vector<std::size_t> order(fractions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return remainders[i] > remainders[j];
    });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) sizes[order[k % order.size()]]++;
    return sizes;
}

// Shuffle-then-apportion split into k parts; each part keeps ascending
// original row order.
inline std::vector<std::vector<std::size_t>> split_indices(const TripletDataset& ds,
                                                           std::span<const double> fractions,
                                                           std::uint64_t seed, bool stratify) {
    Rng rng(derive_seed(seed, seed_tag::split));
    std::vector<std::vector<std::size_t>> parts(fractions.size());
    auto scatter = [&](std::vector<std::size_t>& rows) {
        rng.shuffle(rows);
        const std::vector<std::size_t> sizes = apportion(rows.size(), fractions);
        std::size_t offset = 0;
        for (std::size_t part = 0; part < sizes.size(); ++part) {
            parts[part].insert(parts[part].end(), rows.begin() + offset,
                               rows.begin() + offset + sizes[part]);
            offset += sizes[part];
        }
    };
    if (stratify) {
        std::array<std::vector<std::size_t>, 4> cells;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            cells[cell_index(ds.y[i], ds.a[i])].push_back(i);
        }
        for (auto& cell : cells) {
            if (!cell.empty()) scatter(cell);
        }
    } else {
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), 0);
        scatter(all);
    }
    for (auto& part : parts) std::sort(part.begin(), part.end());
    return parts;
}

} // namespace detail_split

inline std::array<TripletDataset, 3> split(const TripletDataset& ds, SplitFractions fractions,
                                           std::uint64_t seed, bool stratify_by_cell) {
    const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
    for (double v : f) {
        if (!(v > 0.0)) throw ConfigError("split.fractions: every fraction must be > 0");
    }
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
        throw ConfigError("split.fractions: must sum to 1");
    }
    const auto parts = detail_split::split_indices(ds, f, seed, stratify_by_cell);
    static constexpr const char* names[3] = {"train", "val", "test"};
    std::array<TripletDataset, 3> out;
    for (std::size_t i = 0; i < 3; ++i) {
        if (parts[i].empty()) {
            throw ConfigError(std::string("split.fractions: split '") + names[i] +
                              "' rounds to zero rows");
        }
        out[i] = take_rows(ds, parts[i], names[i]);
    }
    return out;
}

// Two-way stratified carve (e.g. fine-tune/selection halves of the balanced
// set).
inline std::array<TripletDataset, 2> split2(const TripletDataset& ds, double first_fraction,
                                            std::uint64_t seed, bool stratify_by_cell,
                                            const std::string& first_name,
                                            const std::string& second_name) {
    if (!(first_fraction > 0.0 && first_fraction < 1.0)) {
        throw ConfigError("split2: fraction must be in (0,1)");
    }
    const std::array<double, 2> f{first_fraction, 1.0 - first_fraction};
    const auto parts = detail_split::split_indices(ds, f, seed, stratify_by_cell);
    if (parts[0].empty() || parts[1].empty()) {
        throw ConfigError("split2: a part rounds to zero rows");
    }
    return {take_rows(ds, parts[0], first_name), take_rows(ds, parts[1], second_name)};
}

} // namespace fairstitch
