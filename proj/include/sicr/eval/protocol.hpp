#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sicr/signal/trial.hpp"

namespace sicr::eval {

enum class Scenario { I = 1, II = 2 };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& text);

// Trial indices into the cohort. Scenario I: `fold` is the held-out fold of
// every subject. Scenario II: `held_out` is the excluded subject.
struct ProtocolPlan {
  Scenario scenario = Scenario::I;
  std::size_t fold = 0;
  std::uint16_t held_out = 0;
  std::vector<std::size_t> train, val, test;
};

constexpr std::size_t kFolds = 5;
// One validation trial per kValRatio + 1 non-test trials (train:val = 7:1).
constexpr std::size_t kValRatio = 7;

// Per subject, trials are dealt into kFolds folds stratified by class; plan k
// tests on fold k of every subject and splits the other folds 7:1 into
// train/val, again per subject and class. Throws ProtocolError naming the
// first subject with fewer than kFolds trials of some class.
std::vector<ProtocolPlan> plan_scenario1(const std::vector<signal::Trial>& trials, std::uint64_t seed);

// Leave-one-subject-out, subjects in ascending id order. Validation is carved
// 7:1 from every remaining subject and class. Needs at least two subjects.
std::vector<ProtocolPlan> plan_scenario2(const std::vector<signal::Trial>& trials, std::uint64_t seed);

// All trials for fitting: the same 7:1 train/val carving per subject and
// class, empty test set.
ProtocolPlan plan_fit_all(const std::vector<signal::Trial>& trials, std::uint64_t seed);

// Throws ProtocolError unless train, val and test are pairwise disjoint and
// together cover 0..n_trials-1 exactly once.
void check_partition(const ProtocolPlan& plan, std::size_t n_trials);

// Content hash of a trial (samples, label, subject).
std::uint64_t trial_hash(const signal::Trial& t);

// Draws `n_batches` training mini-batches the way the fit loop does and
// checks, by id and by content hash, that none contains a trial of the
// held-out subject. Returns the number of batches inspected; throws
// ProtocolError on the first leak.
std::size_t leakage_check(const ProtocolPlan& plan, const std::vector<signal::Trial>& trials,
                          std::size_t n_batches, std::size_t batch_size, std::mt19937_64& rng);

// Subsets of the cohort by index.
std::vector<signal::Trial> select(const std::vector<signal::Trial>& trials,
                                  const std::vector<std::size_t>& idx);

}  // namespace sicr::eval
