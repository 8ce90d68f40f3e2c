// Copyright 2026 The sctune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SCTUNE_ERRORS_HPP_
#define SCTUNE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace sctune {

// Bad configuration or usage. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A run that had to stop: non-finite loss, failed authentication. CLI exit
// code 3.
class RuntimeAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sctune

#endif  // SCTUNE_ERRORS_HPP_
