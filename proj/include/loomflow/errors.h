// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LOOMFLOW_ERRORS_H_
#define LOOMFLOW_ERRORS_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace loomflow {

enum class ErrorCode {
  kShapeMismatch,
  kDtypeMismatch,
  kArityError,
  kDuplicateId,
  kDanglingInput,
  kInvalidGraph,
  kBranchArityMismatch,
  kBranchDtypeMismatch,
  kArityMismatch,
  kNonBooleanPredicate,
  kDoubleWrite,
  kReadBeforeWrite,
  kIndexOutOfRange,
  kNonScalarObjective,
  kNoGradient,
  kMissingFeed,
  kRuntimeKernelError,
  kDeadlockDetected,
  kTagMismatch,
  kPopEmpty,
  kSpillStoreFull,
  kOutOfBudget,
  kUnknownDevice,
  kTransportClosed,
  kRemoteKernelError,
  kParseError,
  kInternal,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported with this exception type; `code()` names
// the failure class and `node()` carries the offending node id when known.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string node = {})
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        node_(std::move(node)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& node() const noexcept { return node_; }

 private:
  ErrorCode code_;
  std::string node_;
};

}  // namespace loomflow

#endif  // LOOMFLOW_ERRORS_H_
