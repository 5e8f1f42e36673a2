#include "fmri_s4/data_io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "fmri_s4/errors.hpp"
#include "fmri_s4/ssm_core.hpp"
#include "json.hpp"

namespace fmri_s4::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_number(std::string_view cell, double& out) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

std::vector<std::string> read_lines(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::exists(path)) throw MissingFile(std::string(what) + " not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(std::string("cannot open ") + what + ": " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// Unit-variance smooth noise: white noise through a normalized Gaussian filter.
std::vector<double> smooth_noise(std::size_t length, double sigma, std::mt19937_64& rng) {
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps;
  double energy = 0.0;
  for (std::ptrdiff_t i = -half; i <= half; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps.push_back(v);
    energy += v * v;
  }
  for (auto& v : taps) v /= std::sqrt(energy);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(length + taps.size() - 1);
  for (auto& v : white) v = normal(rng);
  std::vector<double> out(length, 0.0);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t j = 0; j < taps.size(); ++j) out[t] += taps[j] * white[t + j];
  return out;
}

std::vector<std::size_t> balanced_labels(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % 2;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

}  // namespace

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::size_t Dataset::count_label(std::size_t label) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.label == label; }));
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.n_rois = n_rois;
  out.class_names = class_names;
  out.provenance = provenance;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(samples.at(i));
  return out;
}

DenseMatrix<double> load_timeseries(const std::filesystem::path& path) {
  const auto lines = read_lines(path, "timeseries file");
  std::vector<std::vector<double>> rows;
  std::size_t columns = 0;
  bool first = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string_view line = trim(lines[ln]);
    if (line.empty()) continue;
    const auto cells = split(line);
    std::vector<double> values(cells.size());
    if (first) {
      first = false;
      const bool header = std::none_of(cells.begin(), cells.end(), [](std::string_view c) {
        double unused;
        return parse_number(c, unused);
      });
      if (header) {
        columns = cells.size();
        continue;
      }
    }
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns) {
      throw ParseError(path.string() + ":" + std::to_string(ln + 1) + ": expected " + std::to_string(columns) +
                           " columns, found " + std::to_string(cells.size()),
                       ln + 1, std::min(cells.size(), columns) + 1);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_number(cells[c], values[c])) {
        throw ParseError(path.string() + ":" + std::to_string(ln + 1) + ":" + std::to_string(c + 1) +
                             ": not a number: '" + std::string(cells[c]) + "'",
                         ln + 1, c + 1);
      }
      if (!std::isfinite(values[c])) {
        throw NonFiniteValue(path.string() + ":" + std::to_string(ln + 1) + ":" + std::to_string(c + 1) +
                                 ": non-finite value '" + std::string(cells[c]) + "'",
                             ln + 1, c + 1);
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows", lines.size(), 0);

  DenseMatrix<double> x(columns, rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t r = 0; r < columns; ++r) x(r, t) = rows[t][r];
  return x;
}

Dataset load_manifest(const std::filesystem::path& path) {
  const auto lines = read_lines(path, "manifest");
  std::size_t ln = 0;
  while (ln < lines.size() && trim(lines[ln]).empty()) ++ln;
  if (ln == lines.size()) throw BadHeader(path.string() + ": empty manifest");
  const auto header = split(trim(lines[ln]));
  if (header.size() != 3 || header[0] != "id" || header[1] != "path" || header[2] != "label") {
    throw BadHeader(path.string() + ": header must be 'id,path,label', got '" + std::string(trim(lines[ln])) + "'");
  }

  struct Row {
    std::string id, file, label;
  };
  std::vector<Row> rows;
  std::set<std::string> ids;
  for (++ln; ln < lines.size(); ++ln) {
    const std::string_view line = trim(lines[ln]);
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty() || cells[2].empty()) {
      throw ParseError(path.string() + ":" + std::to_string(ln + 1) + ": expected id,path,label", ln + 1,
                       std::min<std::size_t>(cells.size(), 3) + 1);
    }
    Row row{std::string(cells[0]), std::string(cells[1]), std::string(cells[2])};
    if (!ids.insert(row.id).second) {
      throw ParseError(path.string() + ":" + std::to_string(ln + 1) + ": duplicate id '" + row.id + "'", ln + 1, 1);
    }
    rows.push_back(std::move(row));
  }

  std::set<std::string> label_set;
  for (const auto& row : rows) label_set.insert(row.label);
  Dataset dataset;
  dataset.class_names.assign(label_set.begin(), label_set.end());
  std::map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < dataset.class_names.size(); ++i) class_index[dataset.class_names[i]] = i;

  const auto base = path.parent_path();
  for (const auto& row : rows) {
    std::filesystem::path file(row.file);
    if (file.is_relative()) file = base / file;
    if (!std::filesystem::exists(file)) {
      throw MissingFile("timeseries for id '" + row.id + "' not found: " + file.string());
    }
    Sample sample{row.id, load_timeseries(file), class_index.at(row.label)};
    if (dataset.samples.empty()) {
      dataset.n_rois = sample.n_rois();
    } else if (sample.n_rois() != dataset.n_rois) {
      throw InconsistentRoiCount("sample '" + row.id + "' has " + std::to_string(sample.n_rois()) +
                                 " ROIs, expected " + std::to_string(dataset.n_rois));
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "data");
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary | std::ios::trunc);
  if (!manifest) throw Error("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,path,label\n";
  for (const auto& sample : dataset.samples) {
    const std::string rel = "data/" + sample.id + ".csv";
    std::ofstream out(dir / rel, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / rel).string());
    for (std::size_t r = 0; r < sample.n_rois(); ++r) out << (r ? ",roi_" : "roi_") << r;
    out << '\n';
    for (std::size_t t = 0; t < sample.length(); ++t) {
      for (std::size_t r = 0; r < sample.n_rois(); ++r) {
        if (r) out << ',';
        out << format_value(sample.x(r, t));
      }
      out << '\n';
    }
    manifest << sample.id << ',' << rel << ',' << dataset.class_names.at(sample.label) << '\n';
  }

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["generator"] = dataset.provenance.generator;
  meta["seed"] = dataset.provenance.seed;
  meta["parameters"] = nlohmann::json::object();
  for (const auto& [key, value] : dataset.provenance.parameters) meta["parameters"][key] = value;
  meta["n_samples"] = dataset.size();
  meta["n_rois"] = dataset.n_rois;
  meta["class_names"] = dataset.class_names;
  std::vector<std::size_t> counts;
  for (std::size_t c = 0; c < dataset.n_classes(); ++c) counts.push_back(dataset.count_label(c));
  meta["class_counts"] = counts;
  std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  out << meta.dump(2) << '\n';
}

Dataset gen_synthetic_longrange(std::size_t n_samples, std::size_t n_rois, std::size_t length, std::size_t span,
                                std::uint64_t seed, std::vector<LongRangeTokens>* tokens,
                                const LongRangeOptions& options) {
  constexpr std::size_t kLead = 25;
  const std::size_t w = options.token_width;
  if (n_rois == 0 || w == 0 || w > kLead) throw InvalidSpan("need n_rois >= 1 and 1 <= token_width <= 25");
  if (span == 0 || span + 2 * kLead > length) {
    throw InvalidSpan("span " + std::to_string(span) + " does not fit: need span + 50 <= T = " +
                      std::to_string(length));
  }

  std::mt19937_64 rng(seed);
  const auto labels = balanced_labels(n_samples, rng);
  std::uniform_int_distribution<std::size_t> first_pos(0, kLead - w);
  std::uniform_int_distribution<std::size_t> gap(0, kLead - 1);
  std::bernoulli_distribution coin(0.5);

  std::vector<double> bump(w);
  for (std::size_t i = 0; i < w; ++i) {
    const double s = std::sin(std::numbers::pi * static_cast<double>(i + 1) / static_cast<double>(w + 1));
    bump[i] = options.amplitude * s * s;
  }

  Dataset dataset;
  dataset.n_rois = n_rois;
  dataset.class_names = {"same", "different"};
  dataset.provenance = {"longrange",
                        seed,
                        {{"n_samples", static_cast<double>(n_samples)},
                         {"n_rois", static_cast<double>(n_rois)},
                         {"length", static_cast<double>(length)},
                         {"span", static_cast<double>(span)},
                         {"noise_std", options.noise_std},
                         {"amplitude", options.amplitude},
                         {"token_width", static_cast<double>(w)},
                         {"distractors", static_cast<double>(options.distractors)}}};
  if (tokens) tokens->clear();

  for (std::size_t i = 0; i < n_samples; ++i) {
    Sample sample{sample_id(i), DenseMatrix<double>(n_rois, length), labels[i]};
    for (std::size_t r = 0; r < n_rois; ++r) {
      const auto noise = smooth_noise(length, 2.0, rng);
      for (std::size_t t = 0; t < length; ++t) sample.x(r, t) = options.noise_std * noise[t];
    }
    LongRangeTokens tok;
    tok.first_sign = coin(rng) ? 1 : -1;
    tok.second_sign = labels[i] == 1 ? -tok.first_sign : tok.first_sign;
    tok.first_start = first_pos(rng);
    tok.second_start = tok.first_start + span + gap(rng);
    const auto place = [&](std::size_t start, int sign) {
      for (std::size_t j = 0; j < w; ++j) sample.x(0, start + j) += sign * bump[j];
    };
    place(tok.first_start, tok.first_sign);
    place(tok.second_start, tok.second_sign);

    // Distractors in equal slots, kept 40 steps clear of both tokens.
    const std::size_t lo = tok.first_start + 40;
    const std::size_t hi = tok.first_start + span >= 40 + w ? tok.first_start + span - 40 - w : 0;
    if (options.distractors > 0 && hi > lo && (hi - lo) / options.distractors >= w) {
      const std::size_t slot = (hi - lo) / options.distractors;
      std::uniform_int_distribution<std::size_t> offset(0, slot - w);
      for (std::size_t d = 0; d < options.distractors; ++d) place(lo + d * slot + offset(rng), coin(rng) ? 1 : -1);
    }
    if (tokens) tokens->push_back(tok);
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

namespace {

constexpr std::size_t kSsmState = 8;
constexpr double kSsmRadii[2] = {0.6, 0.9};

struct SsmSystems {
  DenseMatrix<double> a[2];
  std::vector<double> b;
  DenseMatrix<double> readout;  // N x m
};

SsmSystems make_ssm_systems(std::size_t n_rois, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.1, 1.0);

  Eigen::MatrixXd g(kSsmState, kSsmState);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = normal(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  std::vector<double> angles(kSsmState / 2);
  for (auto& a : angles) a = angle(rng);

  SsmSystems sys;
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(kSsmState, kSsmState);
    for (std::size_t j = 0; j < kSsmState / 2; ++j) {
      const auto i = static_cast<Eigen::Index>(2 * j);
      const double rc = kSsmRadii[c] * std::cos(angles[j]), rs = kSsmRadii[c] * std::sin(angles[j]);
      block(i, i) = rc;
      block(i, i + 1) = rs;
      block(i + 1, i) = -rs;
      block(i + 1, i + 1) = rc;
    }
    const Eigen::MatrixXd a = q * block * q.transpose();
    sys.a[c] = DenseMatrix<double>(kSsmState, kSsmState);
    for (std::size_t r = 0; r < kSsmState; ++r)
      for (std::size_t k = 0; k < kSsmState; ++k)
        sys.a[c](r, k) = a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
  }
  sys.b.resize(kSsmState);
  for (auto& v : sys.b) v = normal(rng);
  sys.readout = DenseMatrix<double>(n_rois, kSsmState);
  for (auto& v : sys.readout.values()) v = normal(rng) / std::sqrt(static_cast<double>(kSsmState));
  return sys;
}

}  // namespace

std::pair<DenseMatrix<double>, DenseMatrix<double>> synthetic_ssm_state_matrices(std::uint64_t seed) {
  auto sys = make_ssm_systems(1, seed);
  return {std::move(sys.a[0]), std::move(sys.a[1])};
}

Dataset gen_synthetic_ssm(std::size_t n_samples, std::size_t n_rois, std::size_t length, std::uint64_t seed) {
  if (n_rois == 0 || length == 0) throw InvalidDimension("gen_synthetic_ssm needs n_rois >= 1 and length >= 1");
  const SsmSystems sys = make_ssm_systems(n_rois, seed);
  std::mt19937_64 rng(seed);
  const auto labels = balanced_labels(n_samples, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr std::size_t kBurnIn = 50;
  constexpr double kObservationNoise = 0.1;

  ssm::DiscreteSSM<double> discrete[2];
  for (int c = 0; c < 2; ++c) {
    discrete[c].a_bar = sys.a[c];
    discrete[c].b_bar = sys.b;
    discrete[c].c_bar.assign(kSsmState, 0.0);
  }

  Dataset dataset;
  dataset.n_rois = n_rois;
  dataset.class_names = {"radius_0.6", "radius_0.9"};
  dataset.provenance = {"ssm",
                        seed,
                        {{"n_samples", static_cast<double>(n_samples)},
                         {"n_rois", static_cast<double>(n_rois)},
                         {"length", static_cast<double>(length)},
                         {"state_dim", static_cast<double>(kSsmState)},
                         {"radius_0", kSsmRadii[0]},
                         {"radius_1", kSsmRadii[1]},
                         {"observation_noise", kObservationNoise}}};

  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto& system = discrete[labels[i]];
    Sample sample{sample_id(i), DenseMatrix<double>(n_rois, length), labels[i]};
    std::vector<double> z(kSsmState, 0.0);
    for (std::size_t t = 0; t < kBurnIn + length; ++t) {
      z = ssm::step(system, std::span<const double>(z), normal(rng)).first;
      if (t < kBurnIn) continue;
      for (std::size_t r = 0; r < n_rois; ++r) {
        double y = kObservationNoise * normal(rng);
        for (std::size_t k = 0; k < kSsmState; ++k) y += sys.readout(r, k) * z[k];
        sample.x(r, t - kBurnIn) = y;
      }
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

std::vector<std::size_t> stratified_folds(const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidDimension("need at least 2 folds");
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  for (const auto& [label, idx] : members) {
    if (idx.size() < k) {
      throw InsufficientClassMembers("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                     " members, fewer than " + std::to_string(k) + " folds");
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> fold(labels.size());
  std::size_t next = 0;
  for (auto& [label, idx] : members) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) fold[i] = next++ % k;
  }
  return fold;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const std::vector<std::size_t>& indices, const std::vector<std::size_t>& labels, double fraction,
    std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i : indices) members[labels.at(i)].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> kept, held;
  for (auto& [label, idx] : members) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    n = std::clamp<std::size_t>(n, 1, idx.size() > 1 ? idx.size() - 1 : 1);
    held.insert(held.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    kept.insert(kept.end(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end());
  }
  std::sort(kept.begin(), kept.end());
  std::sort(held.begin(), held.end());
  return {kept, held};
}

}  // namespace fmri_s4::data
