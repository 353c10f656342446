/* Copyright 2026 The stgram Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef STGRAM_CSV_HPP_
#define STGRAM_CSV_HPP_

#include <string>
#include <vector>

namespace stgram {

/// Quotes a field when it contains a separator, quote, or newline.
std::string csv_escape(const std::string& field);

/// Splits one CSV line, honoring double-quoted fields with "" escapes.
std::vector<std::string> csv_split_line(const std::string& line);

/// Reads a whole CSV file into rows of fields. Empty lines are skipped.
std::vector<std::vector<std::string>> csv_read_file(const std::string& path);

std::string csv_join(const std::vector<std::string>& fields);

}  // namespace stgram

#endif  // STGRAM_CSV_HPP_
