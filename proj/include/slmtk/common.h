// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slmtk {

using WordId = int32_t;
using TagId = int32_t;
using LabelId = int32_t;

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// Malformed or inconsistent input data (files, corpora, models).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or parameter ranges.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pruned search ran out of hypotheses.
class SearchFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// log(exp(a) + exp(b)) without overflow.
inline double LogAdd(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

double LogSumExp(std::span<const double> values);

// Shortest decimal form that parses back to the same double.
std::string FormatDouble(double value);

// Strict numeric parsing; throws DataError naming `what` on failure.
double ParseDouble(std::string_view text, std::string_view what);
int64_t ParseInt(std::string_view text, std::string_view what);

std::vector<std::string> SplitWhitespace(std::string_view line);
std::vector<std::string> SplitChar(std::string_view line, char sep);

// 64-bit FNV-1a, used for vocabulary and config checksums.
uint64_t Fnv1a64(std::string_view data, uint64_t seed = 1469598103934665603ULL);
std::string HexDigest(uint64_t value);

// Writes `contents` to a temporary sibling file and renames it over `path`,
// so readers never observe a partial file.
void WriteFileAtomic(const std::string& path, std::string_view contents);
std::string ReadFile(const std::string& path);

}  // namespace slmtk
