#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rrc {

/// Streaming JSON emitter with a fixed layout: 2-space indentation, keys in
/// call order, reals always printed with exactly six fraction digits. Result
/// files written with it are byte-comparable across every producer.
class JsonWriter {
 public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array();
  JsonWriter& end_array();

  JsonWriter& key(std::string_view k);

  JsonWriter& value(std::string_view s);
  JsonWriter& value(const char* s) { return value(std::string_view(s)); }
  JsonWriter& value(const std::string& s) { return value(std::string_view(s)); }
  JsonWriter& value(double d);
  JsonWriter& value(std::int64_t i);
  JsonWriter& value(int i) { return value(static_cast<std::int64_t>(i)); }
  JsonWriter& value(std::size_t i) { return value(static_cast<std::int64_t>(i)); }
  JsonWriter& value(bool b);
  JsonWriter& null();

  /// Finished document with a trailing newline.
  std::string str() const;

 private:
  struct Frame {
    bool object;
    int count;
  };
  void before_value();
  void newline_indent();

  std::string out_;
  std::vector<Frame> stack_;
  bool after_key_ = false;
};

/// JSON string literal (with quotes) for `s`.
std::string json_quote(std::string_view s);

/// Six-decimal fixed rendering used for every real in result files.
std::string format_real(double d);

}  // namespace rrc
