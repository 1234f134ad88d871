#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "capsfuse/training.hpp"

namespace capsfuse::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // I/O or file-format problems
  kUsage = 2,
  kDimension = 3,
  kDegenerate = 4,
  kInvalidMatrix = 5,
};

// Runs one command line (args[0] is the program name). Normal output goes to
// out, diagnostics to err. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Report JSON for a multi-seed training run:
// {strategy, fpr_max, seeds, per_seed:[{seed, auc, pauc_std, f1, threshold}],
//  aggregate:{auc_mean, auc_std, pauc_mean, pauc_std, f1_mean, f1_std}}.
std::string report_json(FusionStrategy strategy, double fpr_max, const std::vector<SeedRun>& runs);

// "epoch,train_loss,val_loss,val_auc" followed by one row per epoch.
std::string train_log_csv(const TrainLog& log);

// Markdown comparison table built from report JSON documents.
std::string markdown_table(const std::vector<std::string>& report_documents);

// Seed-level worker count: CAPSFUSE_THREADS when set to a positive integer,
// else the hardware concurrency.
std::size_t thread_budget();

}  // namespace capsfuse::cli
