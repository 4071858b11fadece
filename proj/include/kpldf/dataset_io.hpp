#pragma once

// Dataset file format: UTF-8 JSON lines.
//
//   line 1   {"format":"kpds","version":1,"n_items":N,"n_instances":S,
//             "seed":<u64>,"split":{"train":[ids],"val":[ids],"test":[ids]}}
//   line 2+  {"id":<u64>,"w":[f64...],"v":[f64...],"W":f64,
//             "x":[0/1...]|null,"opt":f64|null}
//
// Unlabeled instances carry x=null, opt=null. Doubles are serialized with
// the shortest representation that parses back to the same bits, so
// write -> read round-trips exactly.
//
// Ids must cover 0..S-1; instance lines may appear in any order and the
// reader normalizes to ascending id, so split entries double as positions
// into the loaded item sequence.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "kpldf/instance.hpp"

namespace kpldf {

namespace detail {

inline nlohmann::ordered_json header_json(const Dataset& ds) {
  nlohmann::ordered_json h;
  h["format"] = "kpds";
  h["version"] = 1;
  h["n_items"] = ds.n_items;
  h["n_instances"] = ds.items.size();
  h["seed"] = ds.seed;
  h["split"] = {{"train", ds.split.train},
                {"val", ds.split.val},
                {"test", ds.split.test}};
  return h;
}

inline nlohmann::ordered_json instance_json(const LabeledInstance& li) {
  nlohmann::ordered_json o;
  o["id"] = li.instance.id;
  o["w"] = li.instance.weights;
  o["v"] = li.instance.values;
  o["W"] = li.instance.capacity;
  if (li.labeled()) {
    o["x"] = li.label;
    o["opt"] = li.optimal_value;
  } else {
    o["x"] = nullptr;
    o["opt"] = nullptr;
  }
  return o;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path);
  }
  out << detail::header_json(ds).dump() << '\n';
  for (const LabeledInstance& li : ds.items) {
    out << detail::instance_json(li).dump() << '\n';
  }
  out.flush();
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open for reading: " + path);
  }

  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> std::runtime_error {
    return std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                              what);
  };

  if (!std::getline(in, line)) throw fail("missing header line");
  ++line_no;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }

  Dataset ds;
  try {
    if (header.at("format").get<std::string>() != "kpds") {
      throw fail("unknown format field");
    }
    if (header.at("version").get<int>() != 1) {
      throw fail("unsupported version");
    }
    ds.n_items = header.at("n_items").get<std::uint64_t>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    const auto& split = header.at("split");
    ds.split.train = split.at("train").get<std::vector<std::uint64_t>>();
    ds.split.val = split.at("val").get<std::vector<std::uint64_t>>();
    ds.split.test = split.at("test").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  const auto n_declared = header.at("n_instances").get<std::uint64_t>();

  std::unordered_set<std::uint64_t> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json o;
    try {
      o = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("malformed instance line: ") + e.what());
    }
    LabeledInstance li;
    try {
      li.instance.id = o.at("id").get<std::uint64_t>();
      li.instance.weights = o.at("w").get<std::vector<double>>();
      li.instance.values = o.at("v").get<std::vector<double>>();
      li.instance.capacity = o.at("W").get<double>();
      if (!o.at("x").is_null()) {
        li.label = o.at("x").get<std::vector<std::uint8_t>>();
        if (o.at("opt").is_null()) throw fail("label present but opt null");
        li.optimal_value = o.at("opt").get<double>();
      } else if (!o.at("opt").is_null()) {
        throw fail("opt present but label null");
      }
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("malformed instance line: ") + e.what());
    }
    if (li.instance.size() != ds.n_items) {
      throw fail("instance " + std::to_string(li.instance.id) +
                 ": item count differs from header n_items");
    }
    validate_instance(li.instance);
    validate_label(li);
    if (!seen_ids.insert(li.instance.id).second) {
      throw fail("duplicate id " + std::to_string(li.instance.id));
    }
    ds.items.push_back(std::move(li));
  }

  if (ds.items.size() != n_declared) {
    throw std::runtime_error(path + ": header declares " +
                             std::to_string(n_declared) + " instances, found " +
                             std::to_string(ds.items.size()));
  }

  // Unique ids below S cover exactly 0..S-1; order by id so ids are usable
  // as positions.
  for (const LabeledInstance& li : ds.items) {
    if (li.instance.id >= ds.items.size()) {
      throw std::runtime_error(path + ": instance ids must cover 0..S-1, found " +
                               std::to_string(li.instance.id) + " with S=" +
                               std::to_string(ds.items.size()));
    }
  }
  std::sort(ds.items.begin(), ds.items.end(),
            [](const LabeledInstance& a, const LabeledInstance& b) {
              return a.instance.id < b.instance.id;
            });

  // Split sets must name known ids and be pairwise disjoint.
  std::unordered_set<std::uint64_t> split_seen;
  for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
    for (std::uint64_t id : *part) {
      if (!seen_ids.count(id)) {
        throw std::runtime_error(path + ": split references unknown id " +
                                 std::to_string(id));
      }
      if (!split_seen.insert(id).second) {
        throw std::runtime_error(path + ": id " + std::to_string(id) +
                                 " appears in more than one split");
      }
    }
  }
  return ds;
}

}  // namespace kpldf
