#include "sicr/eval/protocol.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <unordered_set>

#include "sicr/errors.hpp"
#include "sicr/train/trainer.hpp"

namespace sicr::eval {

std::string to_string(Scenario s) { return s == Scenario::I ? "I" : "II"; }

Scenario parse_scenario(const std::string& text) {
  if (text == "1" || text == "I") return Scenario::I;
  if (text == "2" || text == "II") return Scenario::II;
  throw ConfigError("unknown scenario '" + text + "' (expected 1|2)");
}

namespace {

// (subject, class) -> trial indices in cohort order.
using Groups = std::map<std::pair<std::uint16_t, int>, std::vector<std::size_t>>;

Groups group_trials(const std::vector<signal::Trial>& trials) {
  Groups g;
  for (std::size_t i = 0; i < trials.size(); ++i) g[{trials[i].subject, trials[i].label}].push_back(i);
  return g;
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

std::size_t val_count(std::size_t n) { return (n + (kValRatio + 1) / 2) / (kValRatio + 1); }

// Splits one group's shuffled non-test trials into train and val.
void carve_val(std::vector<std::size_t> group, std::mt19937_64& rng, ProtocolPlan& plan) {
  shuffle(group, rng);
  const std::size_t nv = val_count(group.size());
  plan.val.insert(plan.val.end(), group.begin(), group.begin() + std::ptrdiff_t(nv));
  plan.train.insert(plan.train.end(), group.begin() + std::ptrdiff_t(nv), group.end());
}

void finalize(ProtocolPlan& p) {
  std::sort(p.train.begin(), p.train.end());
  std::sort(p.val.begin(), p.val.end());
  std::sort(p.test.begin(), p.test.end());
}

std::mt19937_64 derive(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{seed, tag};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<ProtocolPlan> plan_scenario1(const std::vector<signal::Trial>& trials, std::uint64_t seed) {
  if (trials.empty()) throw ProtocolError("scenario I: empty cohort");
  const Groups groups = group_trials(trials);
  std::set<std::uint16_t> subjects;
  for (const auto& [key, idx] : groups) subjects.insert(key.first);
  for (auto s : subjects) {
    for (int c : {0, 1}) {
      auto it = groups.find({s, c});
      const std::size_t n = it == groups.end() ? 0 : it->second.size();
      if (n < kFolds) {
        throw ProtocolError("scenario I: subject " + std::to_string(s) + " has " + std::to_string(n) +
                            " trials of class " + std::to_string(c) + ", needs at least " +
                            std::to_string(kFolds));
      }
    }
  }

  // fold_of[i] for every trial. Dealing continues across the two classes of a
  // subject so fold sizes stay within one trial of each other.
  std::vector<std::size_t> fold_of(trials.size());
  auto rng = derive(seed, 11);
  std::map<std::uint16_t, std::size_t> next_fold;
  for (const auto& [key, idx] : groups) {
    auto order = idx;
    shuffle(order, rng);
    std::size_t& f = next_fold[key.first];
    for (auto i : order) {
      fold_of[i] = f;
      f = (f + 1) % kFolds;
    }
  }

  std::vector<ProtocolPlan> plans;
  for (std::size_t k = 0; k < kFolds; ++k) {
    ProtocolPlan p;
    p.scenario = Scenario::I;
    p.fold = k;
    auto split_rng = derive(seed, 100 + k);
    for (const auto& [key, idx] : groups) {
      std::vector<std::size_t> rest;
      for (auto i : idx) (fold_of[i] == k ? p.test : rest).push_back(i);
      carve_val(std::move(rest), split_rng, p);
    }
    finalize(p);
    plans.push_back(std::move(p));
  }
  return plans;
}

std::vector<ProtocolPlan> plan_scenario2(const std::vector<signal::Trial>& trials, std::uint64_t seed) {
  const Groups groups = group_trials(trials);
  std::set<std::uint16_t> subjects;
  for (const auto& [key, idx] : groups) subjects.insert(key.first);
  if (subjects.size() < 2) {
    throw ProtocolError("scenario II needs at least 2 subjects, cohort has " + std::to_string(subjects.size()));
  }
  std::vector<ProtocolPlan> plans;
  for (auto held : subjects) {
    ProtocolPlan p;
    p.scenario = Scenario::II;
    p.fold = plans.size();
    p.held_out = held;
    auto split_rng = derive(seed, 1000 + held);
    for (const auto& [key, idx] : groups) {
      if (key.first == held) {
        p.test.insert(p.test.end(), idx.begin(), idx.end());
      } else {
        carve_val(idx, split_rng, p);
      }
    }
    finalize(p);
    plans.push_back(std::move(p));
  }
  return plans;
}

ProtocolPlan plan_fit_all(const std::vector<signal::Trial>& trials, std::uint64_t seed) {
  if (trials.empty()) throw ProtocolError("cannot plan an empty cohort");
  ProtocolPlan p;
  p.scenario = Scenario::I;
  auto split_rng = derive(seed, 7);
  for (const auto& [key, idx] : group_trials(trials)) carve_val(idx, split_rng, p);
  finalize(p);
  return p;
}

void check_partition(const ProtocolPlan& plan, std::size_t n_trials) {
  std::vector<int> seen(n_trials, 0);
  for (const auto* part : {&plan.train, &plan.val, &plan.test}) {
    for (auto i : *part) {
      if (i >= n_trials) throw ProtocolError("plan references trial " + std::to_string(i) + " out of range");
      if (seen[i]++) throw ProtocolError("trial " + std::to_string(i) + " appears twice in one plan");
    }
  }
  for (std::size_t i = 0; i < n_trials; ++i) {
    if (!seen[i]) throw ProtocolError("trial " + std::to_string(i) + " is in no split");
  }
}

std::uint64_t trial_hash(const signal::Trial& t) {
  // FNV-1a over the raw sample bytes, label and subject.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  mix(t.x.data(), t.x.size() * sizeof(float));
  mix(&t.label, sizeof t.label);
  mix(&t.subject, sizeof t.subject);
  return h;
}

std::size_t leakage_check(const ProtocolPlan& plan, const std::vector<signal::Trial>& trials,
                          std::size_t n_batches, std::size_t batch_size, std::mt19937_64& rng) {
  if (plan.scenario != Scenario::II) throw ContractError("leakage check applies to scenario II plans");
  std::unordered_set<std::uint64_t> held_hashes;
  for (auto i : plan.test) {
    if (trials.at(i).subject != plan.held_out) {
      throw ProtocolError("test set of plan " + std::to_string(plan.fold) + " contains subject " +
                          std::to_string(trials[i].subject));
    }
    held_hashes.insert(trial_hash(trials[i]));
  }
  std::vector<std::uint64_t> train_hashes;
  train_hashes.reserve(plan.train.size());
  for (auto i : plan.train) train_hashes.push_back(trial_hash(trials.at(i)));
  std::size_t inspected = 0;
  while (inspected < n_batches) {
    for (const auto& batch : train::make_minibatches(plan.train.size(), batch_size, rng)) {
      if (inspected == n_batches) break;
      for (auto b : batch) {
        const auto& t = trials[plan.train[b]];
        if (t.subject == plan.held_out || held_hashes.count(train_hashes[b])) {
          throw ProtocolError("held-out subject " + std::to_string(plan.held_out) +
                              " leaked into training batch " + std::to_string(inspected));
        }
      }
      ++inspected;
    }
  }
  return inspected;
}

std::vector<signal::Trial> select(const std::vector<signal::Trial>& trials,
                                  const std::vector<std::size_t>& idx) {
  std::vector<signal::Trial> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(trials.at(i));
  return out;
}

}  // namespace sicr::eval
