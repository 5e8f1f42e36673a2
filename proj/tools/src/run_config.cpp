#include "fmri_s4_cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>

namespace fmri_s4::cli {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw UsageError("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

std::string show(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view text)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Getter>
Field integer_field(Getter ref) {
  return {[ref](RunConfig& c, std::string_view key, std::string_view text) { ref(c) = parse_number<T>(key, text); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Getter>
Field real_field(Getter ref) {
  return {[ref](RunConfig& c, std::string_view key, std::string_view text) { ref(c) = parse_number<double>(key, text); },
          [ref](const RunConfig& c) { return show(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Getter>
Field text_field(Getter ref) {
  return {[ref](RunConfig& c, std::string_view, std::string_view text) { ref(c) = std::string(text); },
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

using Size = std::size_t;

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"manifest", text_field([](RunConfig& c) -> std::string& { return c.manifest; })},
      {"out", text_field([](RunConfig& c) -> std::string& { return c.out; })},
      {"d_model", integer_field<Size>([](RunConfig& c) -> Size& { return c.model.d_model; })},
      {"k", integer_field<Size>([](RunConfig& c) -> Size& { return c.model.k; })},
      {"k_conv", integer_field<Size>([](RunConfig& c) -> Size& { return c.model.k_conv; })},
      {"k_s4", integer_field<Size>([](RunConfig& c) -> Size& { return c.model.k_s4; })},
      {"d_state", integer_field<Size>([](RunConfig& c) -> Size& { return c.model.d_state; })},
      {"dropout", real_field([](RunConfig& c) -> double& { return c.model.dropout; })},
      {"delta_min", real_field([](RunConfig& c) -> double& { return c.model.delta_min; })},
      {"delta_max", real_field([](RunConfig& c) -> double& { return c.model.delta_max; })},
      {"lr", real_field([](RunConfig& c) -> double& { return c.train.lr; })},
      {"weight_decay", real_field([](RunConfig& c) -> double& { return c.train.weight_decay; })},
      {"max_epochs", integer_field<Size>([](RunConfig& c) -> Size& { return c.train.max_epochs; })},
      {"patience", integer_field<Size>([](RunConfig& c) -> Size& { return c.train.patience; })},
      {"batch_size", integer_field<Size>([](RunConfig& c) -> Size& { return c.train.batch_size; })},
      {"seed", integer_field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; })},
      {"precision",
       {[](RunConfig& c, std::string_view key, std::string_view text) {
          if (text == "single") c.train.precision = train::Precision::single;
          else if (text == "double") c.train.precision = train::Precision::double_precision;
          else throw UsageError("invalid value '" + std::string(text) + "' for " + std::string(key) +
                                " (single|double)");
        },
        [](const RunConfig& c) {
          return std::string(c.train.precision == train::Precision::single ? "single" : "double");
        }}},
      {"val_fraction", real_field([](RunConfig& c) -> double& { return c.val_fraction; })},
      {"folds", integer_field<Size>([](RunConfig& c) -> Size& { return c.folds; })},
      {"repeats", integer_field<Size>([](RunConfig& c) -> Size& { return c.repeats; })},
      {"jobs", integer_field<Size>([](RunConfig& c) -> Size& { return c.jobs; })},
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, f] : fields()) v.push_back(name);
    return v;
  }();
  return names;
}

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

std::string RunConfig::to_text() const {
  std::string text;
  for (const auto& key : keys()) text += key + " = " + get(key) + "\n";
  return text;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file not found: " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    set(trim(view.substr(0, eq)), view.substr(eq + 1));
  }
}

}  // namespace fmri_s4::cli
