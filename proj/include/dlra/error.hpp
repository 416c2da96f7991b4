// dlra/error.hpp

// Copyright 2026  dlra authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef DLRA_ERROR_HPP_
#define DLRA_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace dlra {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

/// Tensor shapes do not satisfy an operation's contract.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string &msg) : Error(msg) {}
};

/// A class label or element index is out of range.
class IndexError : public Error {
 public:
  explicit IndexError(const std::string &msg) : Error(msg) {}
};

/// A configuration file or RunConfig field violates an invariant.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string &msg) : Error(msg) {}
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  explicit IoError(const std::string &msg) : Error(msg) {}
};

/// A checkpoint failed its checksum or version validation.
class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string &msg) : Error(msg) {}
};

/// Training hit a non-finite loss or diverged.
class TrainingAbort : public Error {
 public:
  explicit TrainingAbort(const std::string &msg) : Error(msg) {}
};

}  // namespace dlra

#endif  // DLRA_ERROR_HPP_
