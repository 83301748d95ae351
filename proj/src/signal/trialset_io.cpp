#include "sicr/signal/trialset_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "sicr/errors.hpp"

namespace sicr::signal {

namespace {

constexpr const char* kVersion = "TRIALSET v1";

static_assert(std::endian::native == std::endian::little, "payload IO assumes a little-endian host");

}  // namespace

void write_trialset(std::ostream& out, const TrialSet& set) {
  if (set.trials.empty()) throw ConfigError("refusing to write an empty trial set");
  const auto& first = set.trials.front();
  std::set<int> subjects;
  for (const auto& t : set.trials) {
    t.validate();
    if (t.n_channels != first.n_channels || t.n_times != first.n_times ||
        t.sample_rate != first.sample_rate) {
      throw ConfigError("all trials in a set must share n_c, n_t and sample rate");
    }
    subjects.insert(t.subject);
  }
  nlohmann::json header = {
      {"version", kVersion},
      {"n_trials", set.trials.size()},
      {"n_c", first.n_channels},
      {"n_t", first.n_times},
      {"sample_rate", first.sample_rate},
      {"class_names", set.class_names},
      {"subject_ids", std::vector<int>(subjects.begin(), subjects.end())},
  };
  out << header.dump() << '\n';
  for (const auto& t : set.trials) {
    out.write(reinterpret_cast<const char*>(t.x.data()), std::streamsize(t.x.size() * sizeof(float)));
    auto cls = std::uint8_t(t.label);
    out.write(reinterpret_cast<const char*>(&cls), 1);
    std::uint16_t sid = t.subject;
    out.write(reinterpret_cast<const char*>(&sid), 2);
  }
  if (!out) throw IoError("failed writing trial set");
}

TrialSet read_trialset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("trial set: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trial set: bad header: ") + e.what());
  }
  if (header.value("version", "") != kVersion) throw IoError("trial set: unsupported version");

  TrialSet set;
  std::size_t n_trials = 0, nc = 0, nt = 0;
  double fs = 0;
  try {
    n_trials = header.at("n_trials").get<std::size_t>();
    nc = header.at("n_c").get<std::size_t>();
    nt = header.at("n_t").get<std::size_t>();
    fs = header.at("sample_rate").get<double>();
    set.class_names = header.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trial set: incomplete header: ") + e.what());
  }
  if (set.class_names.size() != 2) throw IoError("trial set: expected two class names");

  const std::size_t record = nc * nt * sizeof(float) + 3;
  auto start = in.tellg();
  in.seekg(0, std::ios::end);
  auto end = in.tellg();
  in.seekg(start);
  if (start < 0 || end < 0 || std::size_t(end - start) != n_trials * record) {
    throw IoError("trial set: payload length does not match header");
  }

  set.trials.reserve(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) {
    Trial t;
    t.n_channels = nc;
    t.n_times = nt;
    t.sample_rate = fs;
    t.x.resize(nc * nt);
    std::uint8_t cls = 0;
    std::uint16_t sid = 0;
    in.read(reinterpret_cast<char*>(t.x.data()), std::streamsize(t.x.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(&cls), 1);
    in.read(reinterpret_cast<char*>(&sid), 2);
    if (!in) throw IoError("trial set: truncated payload");
    t.label = cls;
    t.subject = sid;
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw IoError(std::string("trial set: invalid trial: ") + e.what());
    }
    set.trials.push_back(std::move(t));
  }
  return set;
}

void save_trialset(const std::string& path, const TrialSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_trialset(out, set);
}

TrialSet load_trialset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_trialset(in);
}

}  // namespace sicr::signal
