#include "adg/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace adg {

RatingFormat parse_rating_format(const std::string& s) {
  if (s == "tab_separated") return RatingFormat::tab_separated;
  if (s == "double_colon") return RatingFormat::double_colon;
  throw ConfigError("unknown rating format '" + s + "'");
}

std::string read_text_file(const std::string& path) {
  const bool gz = path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (!gz) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open '" + path + "'");
  std::string out;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError("corrupt gzip stream in '" + path + "'");
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_real(std::string_view tok, std::size_t line) {
  // std::from_chars for double is available in libstdc++ 11.
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("malformed number '" + std::string(tok) + "'", line);
  }
  if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(tok) + "'", line);
  return v;
}

std::uint64_t parse_index(std::string_view tok, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("malformed index '" + std::string(tok) + "'", line);
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

std::vector<std::string_view> split_on(std::string_view s, std::string_view delim) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(delim, pos);
    out.push_back(s.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + delim.size();
  }
  return out;
}

double hash_unit(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t h = splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

enum class Bucket { train, validation, test };

Bucket bucket_of(std::uint64_t seed, std::uint64_t index, double validation_fraction,
                 double test_fraction) {
  const double u = hash_unit(seed, index);
  if (u < test_fraction) return Bucket::test;
  if (u < test_fraction + validation_fraction) return Bucket::validation;
  return Bucket::train;
}

void check_fractions(double validation_fraction, double test_fraction) {
  require(validation_fraction >= 0.0 && test_fraction >= 0.0 &&
              validation_fraction + test_fraction < 1.0,
          "split_dataset: fractions must be non-negative and sum below 1");
}

}  // namespace

ClassificationDataset parse_sparse_classification(std::istream& in) {
  ClassificationDataset data;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = trim(line.substr(0, hash));
    }
    if (line.empty()) continue;
    const auto toks = split_ws(line);
    LabeledExample ex;
    const double label = parse_real(toks[0], line_no);
    if (label == 1.0) {
      ex.label = 1;
    } else if (label == 0.0 || label == -1.0) {
      ex.label = -1;
    } else {
      throw ParseError("label must be 0/1 or -1/+1", line_no);
    }
    for (std::size_t t = 1; t < toks.size(); ++t) {
      const auto colon = toks[t].find(':');
      if (colon == std::string_view::npos) throw ParseError("expected index:value", line_no);
      const std::uint64_t idx = parse_index(toks[t].substr(0, colon), line_no);
      if (idx == 0) throw ParseError("feature indices are 1-based", line_no);
      const auto zero_based = static_cast<std::uint32_t>(idx - 1);
      if (!ex.features.indices.empty() && ex.features.indices.back() >= zero_based) {
        throw ParseError("feature indices must be strictly increasing", line_no);
      }
      ex.features.indices.push_back(zero_based);
      ex.features.values.push_back(parse_real(toks[t].substr(colon + 1), line_no));
    }
    if (!ex.features.indices.empty()) {
      data.dim = std::max<std::size_t>(data.dim, ex.features.indices.back() + 1);
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

ClassificationDataset load_sparse_classification(const std::string& path) {
  std::istringstream in(read_text_file(path));
  return parse_sparse_classification(in);
}

void write_sparse_classification(std::ostream& out, const ClassificationDataset& data) {
  out.precision(17);
  for (const auto& ex : data.examples) {
    out << (ex.label > 0 ? "+1" : "-1");
    for (std::size_t j = 0; j < ex.features.indices.size(); ++j) {
      out << ' ' << (ex.features.indices[j] + 1) << ':' << ex.features.values[j];
    }
    out << '\n';
  }
}

LoadedRatings parse_ratings(std::istream& in, RatingFormat format) {
  LoadedRatings out;
  std::unordered_map<std::string, std::uint32_t> users;
  std::unordered_map<std::string, std::uint32_t> items;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  auto intern = [](std::unordered_map<std::string, std::uint32_t>& map,
                   std::vector<std::string>& ids, std::string_view raw) {
    auto [it, inserted] = map.emplace(std::string(raw), static_cast<std::uint32_t>(ids.size()));
    if (inserted) ids.emplace_back(raw);
    return it->second;
  };
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    const auto fields =
        format == RatingFormat::double_colon ? split_on(line, "::") : split_on(line, "\t");
    if (fields.size() < 3 || fields.size() > 4) {
      throw ParseError("expected user, item, rating[, timestamp]", line_no);
    }
    const auto user_tok = trim(fields[0]);
    const auto item_tok = trim(fields[1]);
    if (user_tok.empty() || item_tok.empty()) throw ParseError("empty id", line_no);
    const double value = parse_real(trim(fields[2]), line_no);
    const std::uint32_t u = intern(users, out.user_ids, user_tok);
    const std::uint32_t i = intern(items, out.item_ids, item_tok);
    if (!seen.emplace(u, i).second) {
      throw DuplicateRating("line " + std::to_string(line_no) + ": duplicate rating for user '" +
                            std::string(user_tok) + "' item '" + std::string(item_tok) + "'");
    }
    out.matrix.ratings.push_back({u, i, value});
  }
  out.matrix.n_users = out.user_ids.size();
  out.matrix.n_items = out.item_ids.size();
  return out;
}

LoadedRatings load_ratings(const std::string& path, RatingFormat format) {
  std::istringstream in(read_text_file(path));
  return parse_ratings(in, format);
}

void write_ratings(std::ostream& out, const RatingMatrix& m, RatingFormat format) {
  const char* sep = format == RatingFormat::double_colon ? "::" : "\t";
  out.precision(17);
  for (const auto& r : m.ratings) out << r.user << sep << r.item << sep << r.value << '\n';
}

SyntheticClassification synth_classification(std::size_t n, std::size_t d, double separation,
                                             double noise, std::uint64_t seed) {
  require(n >= 1 && d >= 1, "synth_classification: n and d must be positive");
  require(noise >= 0.0 && noise <= 1.0, "synth_classification: noise must be in [0, 1]");
  RngState rng(seed, 0);
  SyntheticClassification out;
  out.planted_normal.resize(d);
  double norm = 0.0;
  for (double& x : out.planted_normal) {
    x = rng.normal(0.0, 1.0);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : out.planted_normal) x /= norm;
  out.data.dim = d;
  out.data.examples.reserve(n);
  out.flipped.reserve(n);
  std::vector<double> x(d);
  for (std::size_t s = 0; s < n; ++s) {
    double proj = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = rng.normal(0.0, 1.0);
      proj += x[j] * out.planted_normal[j];
    }
    const int side = proj >= 0.0 ? 1 : -1;
    for (std::size_t j = 0; j < d; ++j) x[j] += separation * side * out.planted_normal[j];
    const bool flip = rng.bernoulli(noise);
    LabeledExample ex;
    ex.label = flip ? -side : side;
    ex.features.indices.resize(d);
    std::iota(ex.features.indices.begin(), ex.features.indices.end(), 0u);
    ex.features.values = x;
    out.data.examples.push_back(std::move(ex));
    out.flipped.push_back(flip);
  }
  return out;
}

SyntheticRatings synth_ratings(std::size_t n_users, std::size_t n_items, std::size_t k_true,
                               double noise, double density, std::uint64_t seed) {
  require(n_users >= 1 && n_items >= 1 && k_true >= 1, "synth_ratings: positive dimensions");
  require(density > 0.0 && density <= 1.0, "synth_ratings: density must be in (0, 1]");
  require(noise >= 0.0, "synth_ratings: noise must be non-negative");
  RngState rng(seed, 0);
  const double scale = std::pow(static_cast<double>(k_true), -0.25);
  SyntheticRatings out{{}, DenseMatrix(n_users, k_true), DenseMatrix(n_items, k_true)};
  for (double& x : out.p_true.data()) x = rng.normal(0.0, scale);
  for (double& x : out.q_true.data()) x = rng.normal(0.0, scale);
  out.matrix.n_users = n_users;
  out.matrix.n_items = n_items;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    for (std::uint32_t i = 0; i < n_items; ++i) {
      if (!rng.bernoulli(density)) continue;
      double r = 0.0;
      for (std::size_t c = 0; c < k_true; ++c) r += out.p_true(u, c) * out.q_true(i, c);
      if (noise > 0.0) r += rng.normal(0.0, noise);
      out.matrix.ratings.push_back({u, i, r});
    }
  }
  return out;
}

Split<ClassificationDataset> split_dataset(const ClassificationDataset& data, std::uint64_t seed,
                                           double validation_fraction, double test_fraction) {
  check_fractions(validation_fraction, test_fraction);
  Split<ClassificationDataset> out;
  out.train.dim = out.validation.dim = out.test.dim = data.dim;
  for (std::size_t j = 0; j < data.examples.size(); ++j) {
    switch (bucket_of(seed, j, validation_fraction, test_fraction)) {
      case Bucket::train: out.train.examples.push_back(data.examples[j]); break;
      case Bucket::validation: out.validation.examples.push_back(data.examples[j]); break;
      case Bucket::test: out.test.examples.push_back(data.examples[j]); break;
    }
  }
  return out;
}

Split<RatingMatrix> split_dataset(const RatingMatrix& data, std::uint64_t seed,
                                  double validation_fraction, double test_fraction) {
  check_fractions(validation_fraction, test_fraction);
  Split<RatingMatrix> out;
  for (auto* m : {&out.train, &out.validation, &out.test}) {
    m->n_users = data.n_users;
    m->n_items = data.n_items;
  }
  for (std::size_t j = 0; j < data.ratings.size(); ++j) {
    switch (bucket_of(seed, j, validation_fraction, test_fraction)) {
      case Bucket::train: out.train.ratings.push_back(data.ratings[j]); break;
      case Bucket::validation: out.validation.ratings.push_back(data.ratings[j]); break;
      case Bucket::test: out.test.ratings.push_back(data.ratings[j]); break;
    }
  }
  return out;
}

std::vector<std::size_t> Partition::sizes() const {
  std::vector<std::size_t> s(m, 0);
  for (std::size_t a : assignment) ++s.at(a);
  return s;
}

Partition partition(const ClassificationDataset& data, std::size_t m) {
  require(m >= 1, "partition: m must be positive");
  Partition p;
  p.m = m;
  p.assignment.resize(data.examples.size());
  for (std::size_t j = 0; j < p.assignment.size(); ++j) p.assignment[j] = j % m;
  return p;
}

Partition partition(const RatingMatrix& data, std::size_t m) {
  require(m >= 1, "partition: m must be positive");
  if (m > data.n_users) {
    throw InfeasiblePartition("cannot split " + std::to_string(data.n_users) +
                              " users into " + std::to_string(m) + " row blocks");
  }
  std::vector<std::size_t> prefix(data.n_users + 1, 0);
  for (const auto& r : data.ratings) ++prefix.at(r.user + 1);
  for (std::size_t u = 0; u < data.n_users; ++u) prefix[u + 1] += prefix[u];
  const double total = static_cast<double>(prefix.back());

  // Cut b sits at the user boundary whose prefix count is closest to b*total/m,
  // keeping at least one user in every block.
  std::vector<std::size_t> cuts{0};
  for (std::size_t b = 1; b < m; ++b) {
    const double target = total * static_cast<double>(b) / static_cast<double>(m);
    const std::size_t lo = cuts.back() + 1;
    const std::size_t hi = data.n_users - (m - b);
    std::size_t best = lo;
    for (std::size_t c = lo; c <= hi; ++c) {
      if (std::abs(static_cast<double>(prefix[c]) - target) <
          std::abs(static_cast<double>(prefix[best]) - target)) {
        best = c;
      }
    }
    cuts.push_back(best);
  }
  cuts.push_back(data.n_users);

  Partition p;
  p.m = m;
  p.assignment.resize(data.n_users);
  for (std::size_t b = 0; b < m; ++b)
    for (std::size_t u = cuts[b]; u < cuts[b + 1]; ++u) p.assignment[u] = b;
  return p;
}

std::vector<IndexRange> block_ranges(const Partition& p) {
  std::vector<IndexRange> out(p.m);
  std::vector<bool> started(p.m, false);
  for (std::size_t u = 0; u < p.assignment.size(); ++u) {
    const std::size_t b = p.assignment[u];
    require(b < p.m, "block_ranges: assignment out of range");
    if (!started[b]) {
      require(b == 0 ? u == 0 : started[b - 1] && out[b - 1].end == u,
              "block_ranges: partition is not contiguous");
      out[b].begin = static_cast<std::uint32_t>(u);
      started[b] = true;
    }
    require(out[b].end == 0 || out[b].end == u, "block_ranges: partition is not contiguous");
    out[b].end = static_cast<std::uint32_t>(u + 1);
  }
  return out;
}

std::vector<IndexRange> equal_ranges(std::size_t n, std::size_t m) {
  require(m >= 1, "equal_ranges: m must be positive");
  std::vector<IndexRange> out(m);
  for (std::size_t b = 0; b < m; ++b) {
    out[b].begin = static_cast<std::uint32_t>(b * n / m);
    out[b].end = static_cast<std::uint32_t>((b + 1) * n / m);
  }
  return out;
}

std::vector<std::vector<LabeledExample>> shard_examples(const ClassificationDataset& data,
                                                        const Partition& p) {
  require(p.assignment.size() == data.examples.size(), "shard_examples: partition size mismatch");
  std::vector<std::vector<LabeledExample>> shards(p.m);
  for (std::size_t j = 0; j < data.examples.size(); ++j) {
    shards.at(p.assignment[j]).push_back(data.examples[j]);
  }
  return shards;
}

std::vector<std::vector<Rating>> shard_ratings(const RatingMatrix& data,
                                               std::span<const IndexRange> user_blocks) {
  std::vector<std::vector<Rating>> shards(user_blocks.size());
  for (const auto& r : data.ratings) {
    bool placed = false;
    for (std::size_t b = 0; b < user_blocks.size(); ++b) {
      if (user_blocks[b].contains(r.user)) {
        shards[b].push_back({r.user - user_blocks[b].begin, r.item, r.value});
        placed = true;
        break;
      }
    }
    require(placed, "shard_ratings: user outside every block");
  }
  return shards;
}

}  // namespace adg
