#include "malbench/data.hpp"

#include "malbench/errors.hpp"
#include "malbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace malbench::data {

int hamming_distance(const BitVec& a, const BitVec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("hamming: length mismatch");
    int dist = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dist += a[i] != b[i];
    return dist;
}

bool covers(const BitVec& a, const BitVec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("covers: length mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (b[i] && !a[i]) return false;
    return true;
}

Vec to_real(const BitVec& bits) {
    Vec x(static_cast<Eigen::Index>(bits.size()));
    for (std::size_t i = 0; i < bits.size(); ++i) x[static_cast<Eigen::Index>(i)] = bits[i];
    return x;
}

BitVec BitMatrix::row(int i) const {
    return BitVec(bits.begin() + static_cast<std::ptrdiff_t>(i) * d,
                  bits.begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
}

Mat BitMatrix::to_real() const {
    Mat m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = at(i, j);
    return m;
}

void BitMatrix::validate() const {
    if (n < 0 || d < 0) throw DataError("BitMatrix: negative dimensions");
    if (bits.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(d))
        throw DataError("BitMatrix: storage size mismatch");
    for (std::uint8_t b : bits)
        if (b > 1) throw DataError("BitMatrix: non-binary entry");
    if (!feature_names.empty()) {
        if (static_cast<int>(feature_names.size()) != d)
            throw DataError("BitMatrix: feature_names length mismatch");
        std::set<std::string> uniq(feature_names.begin(), feature_names.end());
        if (static_cast<int>(uniq.size()) != d)
            throw DataError("BitMatrix: duplicate feature names");
    }
}

BitMatrix BitMatrix::zeros(int n, int d) {
    BitMatrix m;
    m.n = n;
    m.d = d;
    m.bits.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(d), 0);
    return m;
}

void Dataset::validate() const {
    X.validate();
    if (static_cast<int>(y.size()) != X.n) throw DataError("Dataset: label count mismatch");
    for (int label : y)
        if (label != 0 && label != 1) throw DataError("Dataset: labels must be 0 or 1");
}

int Dataset::count_label(int label) const {
    return static_cast<int>(std::count(y.begin(), y.end(), label));
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
    Dataset out;
    out.X.n = static_cast<int>(rows.size());
    out.X.d = X.d;
    out.X.feature_names = X.feature_names;
    out.X.bits.reserve(rows.size() * static_cast<std::size_t>(X.d));
    out.y.reserve(rows.size());
    for (int r : rows) {
        if (r < 0 || r >= X.n) throw std::invalid_argument("subset: row index out of range");
        out.X.bits.insert(out.X.bits.end(), X.bits.begin() + static_cast<std::ptrdiff_t>(r) * X.d,
                          X.bits.begin() + static_cast<std::ptrdiff_t>(r + 1) * X.d);
        out.y.push_back(y[static_cast<std::size_t>(r)]);
    }
    return out;
}

std::vector<int> Dataset::rows_with_label(int label) const {
    std::vector<int> rows;
    for (int i = 0; i < X.n; ++i)
        if (y[static_cast<std::size_t>(i)] == label) rows.push_back(i);
    return rows;
}

BitMatrix Dataset::rows_matrix(const std::vector<int>& rows) const {
    return subset(rows).X;
}

void SplitSpec::validate() const {
    if (train_frac < 0 || val_frac < 0 || test_frac < 0)
        throw std::invalid_argument("split fractions must be non-negative");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12)
        throw std::invalid_argument("split fractions must sum to 1");
}

void SynthSpec::validate() const {
    if (n_benign < 0 || n_malware < 0 || d <= 0) throw std::invalid_argument("synth: bad sizes");
    if (n_malware_markers < 0 || n_benign_markers < 0 ||
        n_malware_markers + n_benign_markers > d)
        throw std::invalid_argument("synth: marker counts must fit into d");
    if (marker_on_prob < 0 || marker_on_prob > 1 || background_on_prob < 0 || background_on_prob > 1)
        throw std::invalid_argument("synth: probabilities must be in [0,1]");
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

namespace {

std::string trimmed(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void line_error(const std::string& path, int line_no, const std::string& what) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset: " + path);

    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    ++line_no;

    std::vector<std::string> header;
    {
        std::stringstream ss(trimmed(line));
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(trimmed(cell));
    }
    if (header.size() < 2 || header.back() != "label")
        throw DataError(path + ": header must end with a 'label' column");

    Dataset ds;
    ds.X.d = static_cast<int>(header.size()) - 1;
    ds.X.feature_names.assign(header.begin(), header.end() - 1);

    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trimmed(line);
        if (t.empty()) continue;
        std::stringstream ss(t);
        std::string cell;
        std::vector<std::uint8_t> row;
        row.reserve(header.size());
        while (std::getline(ss, cell, ',')) {
            std::string v = trimmed(cell);
            if (v == "0")
                row.push_back(0);
            else if (v == "1")
                row.push_back(1);
            else
                line_error(path, line_no, "non-binary value '" + v + "'");
        }
        if (row.size() != header.size())
            line_error(path, line_no, "expected " + std::to_string(header.size()) + " cells, got " +
                                          std::to_string(row.size()));
        ds.y.push_back(row.back());
        row.pop_back();
        ds.X.bits.insert(ds.X.bits.end(), row.begin(), row.end());
        ds.X.n += 1;
    }
    ds.validate();
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset: " + path);
    for (int j = 0; j < ds.X.d; ++j) {
        out << (ds.X.feature_names.empty() ? "f" + std::to_string(j) : ds.X.feature_names[static_cast<std::size_t>(j)]);
        out << ',';
    }
    out << "label\n";
    for (int i = 0; i < ds.X.n; ++i) {
        for (int j = 0; j < ds.X.d; ++j) out << int(ds.X.at(i, j)) << ',';
        out << ds.y[static_cast<std::size_t>(i)] << '\n';
    }
    if (!out) throw DataError("failed writing dataset: " + path);
}

Dataset load_sparse(const std::string& path, int dim) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset: " + path);

    struct Record {
        int label;
        std::vector<int> indices;
        int line_no;
    };
    std::vector<Record> records;
    int max_index = -1;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string t = trimmed(line);
        if (t.empty()) continue;
        std::stringstream ss(t);
        Record rec;
        rec.line_no = line_no;
        std::string tok;
        bool first = true;
        while (ss >> tok) {
            long value = 0;
            try {
                std::size_t pos = 0;
                value = std::stol(tok, &pos);
                if (pos != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                line_error(path, line_no, "non-integer token '" + tok + "'");
            }
            if (first) {
                if (value != 0 && value != 1) line_error(path, line_no, "label must be 0 or 1");
                rec.label = static_cast<int>(value);
                first = false;
            } else {
                if (value < 0) line_error(path, line_no, "negative feature index");
                if (!rec.indices.empty()) {
                    if (value == rec.indices.back())
                        line_error(path, line_no, "duplicate feature index " + std::to_string(value));
                    if (value < rec.indices.back())
                        line_error(path, line_no, "feature indices must be ascending");
                }
                rec.indices.push_back(static_cast<int>(value));
                max_index = std::max(max_index, static_cast<int>(value));
            }
        }
        if (first) line_error(path, line_no, "missing label");
        records.push_back(std::move(rec));
    }

    int d = dim > 0 ? dim : max_index + 1;
    if (d <= 0) throw DataError(path + ": cannot infer dimension from an all-empty file");

    Dataset ds;
    ds.X = BitMatrix::zeros(static_cast<int>(records.size()), d);
    ds.y.reserve(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
        for (int idx : records[r].indices) {
            if (idx >= d)
                line_error(path, records[r].line_no,
                           "feature index " + std::to_string(idx) + " out of range (d=" + std::to_string(d) + ")");
            ds.X.set(static_cast<int>(r), idx, 1);
        }
        ds.y.push_back(records[r].label);
    }
    ds.validate();
    return ds;
}

void save_sparse(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset: " + path);
    out << "# d=" << ds.X.d << "\n";
    for (int i = 0; i < ds.X.n; ++i) {
        out << ds.y[static_cast<std::size_t>(i)];
        for (int j = 0; j < ds.X.d; ++j)
            if (ds.X.at(i, j)) out << ' ' << j;
        out << '\n';
    }
    if (!out) throw DataError("failed writing dataset: " + path);
}

// ---------------------------------------------------------------------------
// Feature selection
// ---------------------------------------------------------------------------

Vec chi2_scores(const Dataset& ds) {
    ds.validate();
    const int n = ds.X.n;
    const int n_mal = ds.count_label(1);
    const int n_ben = n - n_mal;
    if (n_mal == 0 || n_ben == 0) throw std::invalid_argument("chi2 requires both classes");

    const double frac_ben = static_cast<double>(n_ben) / n;
    const double frac_mal = static_cast<double>(n_mal) / n;

    Vec scores = Vec::Zero(ds.X.d);
    for (int j = 0; j < ds.X.d; ++j) {
        double obs_ben = 0, obs_mal = 0;
        for (int i = 0; i < n; ++i) {
            if (!ds.X.at(i, j)) continue;
            (ds.y[static_cast<std::size_t>(i)] == 1 ? obs_mal : obs_ben) += 1.0;
        }
        const double total = obs_ben + obs_mal;
        if (total == 0.0) continue;  // all-zero feature scores 0
        const double exp_ben = frac_ben * total;
        const double exp_mal = frac_mal * total;
        scores[j] = (obs_ben - exp_ben) * (obs_ben - exp_ben) / exp_ben +
                    (obs_mal - exp_mal) * (obs_mal - exp_mal) / exp_mal;
    }
    return scores;
}

std::pair<std::vector<int>, Dataset> select_k_best(const Dataset& ds, int k) {
    if (k < 1 || k > ds.X.d) throw std::invalid_argument("select_k_best: k out of range");
    Vec scores = chi2_scores(ds);

    std::vector<int> order(static_cast<std::size_t>(ds.X.d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;  // ties to the lower index
    });
    std::vector<int> selected(order.begin(), order.begin() + k);
    std::sort(selected.begin(), selected.end());

    Dataset reduced;
    reduced.X.n = ds.X.n;
    reduced.X.d = k;
    reduced.y = ds.y;
    reduced.X.bits.reserve(static_cast<std::size_t>(ds.X.n) * static_cast<std::size_t>(k));
    if (!ds.X.feature_names.empty())
        for (int j : selected) reduced.X.feature_names.push_back(ds.X.feature_names[static_cast<std::size_t>(j)]);
    for (int i = 0; i < ds.X.n; ++i)
        for (int j : selected) reduced.X.bits.push_back(ds.X.at(i, j));
    return {selected, reduced};
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

Split split_dataset(const Dataset& ds, const SplitSpec& spec) {
    ds.validate();
    spec.validate();
    if (ds.X.n == 0) throw std::invalid_argument("cannot split an empty dataset");

    std::vector<std::vector<int>> groups;
    if (spec.stratified) {
        groups.push_back(ds.rows_with_label(0));
        groups.push_back(ds.rows_with_label(1));
        for (const auto& g : groups)
            if (!g.empty() && static_cast<int>(g.size()) < 3)
                throw std::invalid_argument("stratified split needs at least 3 rows per class");
    } else {
        std::vector<int> all(static_cast<std::size_t>(ds.X.n));
        std::iota(all.begin(), all.end(), 0);
        groups.push_back(std::move(all));
    }

    auto rng = make_rng(derive_seed(spec.seed, "split"));
    std::vector<int> train_rows, val_rows, test_rows;
    for (auto& g : groups) {
        std::shuffle(g.begin(), g.end(), rng);
        const int n = static_cast<int>(g.size());
        const int n_val = static_cast<int>(std::floor(spec.val_frac * n));
        const int n_test = static_cast<int>(std::floor(spec.test_frac * n));
        const int n_train = n - n_val - n_test;  // remainder rows go to train
        train_rows.insert(train_rows.end(), g.begin(), g.begin() + n_train);
        val_rows.insert(val_rows.end(), g.begin() + n_train, g.begin() + n_train + n_val);
        test_rows.insert(test_rows.end(), g.begin() + n_train + n_val, g.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(test_rows.begin(), test_rows.end());

    return {ds.subset(train_rows), ds.subset(val_rows), ds.subset(test_rows)};
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

Dataset generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    auto rng = make_rng(derive_seed(spec.seed, "synth"));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const int mm = spec.n_malware_markers;
    const int bm = spec.n_benign_markers;
    Dataset ds;
    ds.X = BitMatrix::zeros(spec.n_benign + spec.n_malware, spec.d);
    ds.X.feature_names.reserve(static_cast<std::size_t>(spec.d));
    for (int j = 0; j < spec.d; ++j) ds.X.feature_names.push_back("f" + std::to_string(j));
    ds.y.assign(static_cast<std::size_t>(spec.n_benign + spec.n_malware), 0);

    for (int i = 0; i < ds.X.n; ++i) {
        const bool malware = i >= spec.n_benign;
        ds.y[static_cast<std::size_t>(i)] = malware ? 1 : 0;
        for (int j = 0; j < spec.d; ++j) {
            double p = spec.background_on_prob;
            if (j < mm) {
                p = malware ? spec.marker_on_prob : spec.background_on_prob;
            } else if (j < mm + bm) {
                p = malware ? spec.background_on_prob : spec.marker_on_prob;
            }
            if (u(rng) < p) ds.X.set(i, j, 1);
        }
    }
    return ds;
}

}  // namespace malbench::data
