#include <istream>
#include <ostream>
#include <string>

#include "crgrf/error.hpp"
#include "crgrf/forest.hpp"
#include "format.hpp"

namespace crgrf {

namespace {

constexpr int kFormatVersion = 1;

void expect(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word) {
    throw SchemaError("forest dump: expected '" + word + "', found '" + got + "'");
  }
}

template <typename T>
T read_value(std::istream& in, const char* what) {
  T v{};
  if (!(in >> v)) throw SchemaError(std::string("forest dump: cannot read ") + what);
  return v;
}

void write_rows(std::ostream& out, const char* tag, const std::vector<std::size_t>& rows) {
  out << tag << ' ' << rows.size();
  for (auto i : rows) out << ' ' << i;
  out << '\n';
}

std::vector<std::size_t> read_rows(std::istream& in, const char* tag, std::size_t n) {
  expect(in, tag);
  const auto count = read_value<std::size_t>(in, tag);
  std::vector<std::size_t> rows(count);
  for (auto& r : rows) {
    r = read_value<std::size_t>(in, tag);
    if (r >= n) throw SchemaError("forest dump: row index out of range");
  }
  return rows;
}

}  // namespace

// Layout (whitespace separated, one record per line):
//   crgrf-forest <version>
//   options <n> <p> <trees> <seed> <min_node_size> <fraction> <honesty> <mtry> <group_size>
//   meta <treatment_index> <scale>
//   grove <g> <rows...>                      (count-prefixed row lists)
//   tree <b> <group> <valid> <node_count>
//   split/estimation <rows...>
//   node <id> <covariate|-1> <threshold> <left> <right> members <rows...>
void write_forest_text(std::ostream& out, const ForestModel& model) {
  const auto& o = model.options();
  const auto& d = model.data();
  out << "crgrf-forest " << kFormatVersion << '\n';
  out << "options " << d.n << ' ' << d.p << ' ' << o.trees << ' ' << o.seed << ' '
      << o.min_node_size << ' ' << detail::exact(o.subsample_fraction) << ' ' << (o.honesty ? 1 : 0)
      << ' ' << o.mtry << ' ' << o.group_size << '\n';
  out << "meta " << model.treatment_index << ' ' << to_string(model.scale) << '\n';
  out << "groves " << model.num_groups() << '\n';
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    std::vector<std::size_t> rows;
    const auto& mask = model.half_sample(g);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) rows.push_back(i);
    }
    write_rows(out, "grove", rows);
  }
  for (std::size_t b = 0; b < model.trees().size(); ++b) {
    const auto& t = model.trees()[b];
    out << "tree " << b << ' ' << t.group << ' ' << (t.valid ? 1 : 0) << ' ' << t.nodes.size()
        << '\n';
    write_rows(out, "split", t.split_half);
    write_rows(out, "estimation", t.estimation_half);
    for (std::size_t id = 0; id < t.nodes.size(); ++id) {
      const auto& nd = t.nodes[id];
      out << "node " << id << ' ' << nd.split_covariate << ' ' << detail::exact(nd.split_value)
          << ' ' << nd.left << ' ' << nd.right << ' ';
      write_rows(out, "members", nd.leaf_members);
    }
  }
}

ForestModel read_forest_text(std::istream& in, ForestData data) {
  expect(in, "crgrf-forest");
  const int version = read_value<int>(in, "version");
  if (version != kFormatVersion) {
    throw SchemaError("forest dump: unsupported version " + std::to_string(version));
  }
  expect(in, "options");
  const auto n = read_value<std::size_t>(in, "n");
  const auto p = read_value<std::size_t>(in, "p");
  if (n != data.n || p != data.p) throw SchemaError("forest dump does not match the data shape");
  ForestOptions o;
  o.trees = read_value<std::size_t>(in, "trees");
  o.seed = read_value<std::uint64_t>(in, "seed");
  o.min_node_size = read_value<std::size_t>(in, "min_node_size");
  o.subsample_fraction = read_value<double>(in, "fraction");
  o.honesty = read_value<int>(in, "honesty") != 0;
  o.mtry = read_value<std::size_t>(in, "mtry");
  o.group_size = read_value<std::size_t>(in, "group_size");
  expect(in, "meta");
  const auto treatment_index = read_value<std::size_t>(in, "treatment");
  const auto scale = parse_scale(read_value<std::string>(in, "scale"));
  expect(in, "groves");
  const auto groves = read_value<std::size_t>(in, "grove count");
  std::vector<std::vector<std::uint8_t>> half(groves, std::vector<std::uint8_t>(n, 0));
  for (auto& mask : half) {
    for (auto i : read_rows(in, "grove", n)) mask[i] = 1;
  }
  std::vector<Tree> trees(o.trees);
  for (std::size_t b = 0; b < o.trees; ++b) {
    expect(in, "tree");
    if (read_value<std::size_t>(in, "tree index") != b) throw SchemaError("forest dump: tree order");
    auto& t = trees[b];
    t.group = read_value<std::size_t>(in, "group");
    t.valid = read_value<int>(in, "valid") != 0;
    t.nodes.resize(read_value<std::size_t>(in, "node count"));
    t.split_half = read_rows(in, "split", n);
    t.estimation_half = read_rows(in, "estimation", n);
    for (std::size_t id = 0; id < t.nodes.size(); ++id) {
      expect(in, "node");
      if (read_value<std::size_t>(in, "node id") != id) throw SchemaError("forest dump: node order");
      auto& nd = t.nodes[id];
      nd.split_covariate = read_value<std::int32_t>(in, "covariate");
      nd.split_value = read_value<double>(in, "threshold");
      nd.left = read_value<std::uint32_t>(in, "left");
      nd.right = read_value<std::uint32_t>(in, "right");
      nd.leaf_members = read_rows(in, "members", n);
      for (auto i : nd.leaf_members) {
        const double a = data.treatment[i], y = data.outcome[i];
        nd.stats.count += 1.0;
        nd.stats.sum_a += a;
        nd.stats.sum_aa += a * a;
        nd.stats.sum_y += y;
        nd.stats.sum_ay += a * y;
      }
      if (!nd.is_leaf() && (nd.left >= t.nodes.size() || nd.right >= t.nodes.size() ||
                            static_cast<std::size_t>(nd.split_covariate) >= p)) {
        throw SchemaError("forest dump: malformed node");
      }
    }
  }
  ForestModel model(std::move(data), o, std::move(trees), std::move(half));
  model.treatment_index = treatment_index;
  model.scale = scale;
  return model;
}

}  // namespace crgrf
