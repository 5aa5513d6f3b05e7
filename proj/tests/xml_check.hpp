#pragma once

// Strict XML 1.0 well-formedness checker for test oracles. Handles the
// subset SVG output can legally use: optional declaration, comments,
// elements, attributes, character data and entity references. No DTDs.

#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace xmlcheck {

struct Element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
};

class Checker {
 public:
  explicit Checker(const std::string& text) : s_(text) {}

  /// Empty on success, otherwise a description with the byte offset.
  std::optional<std::string> run() {
    try {
      if (s_.compare(0, 5, "<?xml") == 0) skip_past("?>");
      misc();
      if (!peek('<')) fail("expected root element");
      element();
      misc();
      if (pos_ != s_.size()) fail("content after the root element");
    } catch (const std::string& e) {
      return e;
    }
    return std::nullopt;
  }

  const std::vector<Element>& elements() const { return elements_; }
  std::size_t roots() const { return roots_; }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw msg + " at offset " + std::to_string(pos_); }
  bool peek(char c) const { return pos_ < s_.size() && s_[pos_] == c; }
  bool starts(const char* lit) const { return s_.compare(pos_, std::char_traits<char>::length(lit), lit) == 0; }
  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\n' || s_[pos_] == '\t' || s_[pos_] == '\r')) ++pos_;
  }
  void skip_past(const char* end) {
    const auto p = s_.find(end, pos_);
    if (p == std::string::npos) fail(std::string("unterminated construct, missing '") + end + "'");
    pos_ = p + std::char_traits<char>::length(end);
  }
  void comment() {
    pos_ += 4;
    const auto p = s_.find("--", pos_);
    if (p == std::string::npos || p + 2 >= s_.size() || s_[p + 2] != '>') fail("malformed comment");
    pos_ = p + 3;
  }
  void misc() {
    for (;;) {
      skip_ws();
      if (starts("<!--")) comment();
      else return;
    }
  }

  static bool name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':'; }
  static bool name_char(char c) { return name_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.'; }

  std::string name() {
    if (pos_ >= s_.size() || !name_start(s_[pos_])) fail("expected a name");
    const std::size_t b = pos_;
    while (pos_ < s_.size() && name_char(s_[pos_])) ++pos_;
    return s_.substr(b, pos_ - b);
  }

  void reference() {
    expect('&');
    if (peek('#')) {
      ++pos_;
      const bool hex = peek('x');
      if (hex) ++pos_;
      const std::size_t b = pos_;
      while (pos_ < s_.size() && (hex ? std::isxdigit(static_cast<unsigned char>(s_[pos_])) : std::isdigit(static_cast<unsigned char>(s_[pos_])))) ++pos_;
      if (pos_ == b) fail("empty character reference");
    } else {
      static const std::set<std::string> known{"amp", "lt", "gt", "quot", "apos"};
      if (!known.count(name())) fail("undefined entity");
    }
    expect(';');
  }

  static bool legal_char(unsigned char c) { return c >= 0x20 || c == '\n' || c == '\t' || c == '\r'; }

  std::string attribute_value() {
    if (!peek('"') && !peek('\'')) fail("attribute value must be quoted");
    const char q = s_[pos_++];
    const std::size_t b = pos_;
    while (!peek(q)) {
      if (pos_ >= s_.size()) fail("unterminated attribute value");
      if (s_[pos_] == '<') fail("'<' inside attribute value");
      if (!legal_char(static_cast<unsigned char>(s_[pos_]))) fail("illegal character in attribute value");
      if (s_[pos_] == '&') reference();
      else ++pos_;
    }
    const std::string v = s_.substr(b, pos_ - b);
    ++pos_;
    return v;
  }

  void element() {
    if (depth_ == 0) ++roots_;
    expect('<');
    Element el;
    el.name = name();
    std::set<std::string> seen;
    for (;;) {
      const std::size_t before = pos_;
      skip_ws();
      if (peek('/') || peek('>')) break;
      if (pos_ == before) fail("attributes must be separated by whitespace");
      const std::string an = name();
      if (!seen.insert(an).second) fail("duplicate attribute '" + an + "'");
      skip_ws();
      expect('=');
      skip_ws();
      el.attributes.emplace_back(an, attribute_value());
    }
    elements_.push_back(el);
    if (peek('/')) {
      ++pos_;
      expect('>');
      return;
    }
    expect('>');
    ++depth_;
    for (;;) {
      if (pos_ >= s_.size()) fail("unclosed element <" + el.name + ">");
      if (starts("</")) {
        pos_ += 2;
        const std::string closing = name();
        if (closing != el.name) fail("mismatched closing tag </" + closing + "> for <" + el.name + ">");
        skip_ws();
        expect('>');
        --depth_;
        return;
      }
      if (starts("<!--")) {
        comment();
      } else if (starts("<![CDATA[")) {
        skip_past("]]>");
      } else if (peek('<')) {
        element();
      } else if (peek('&')) {
        reference();
      } else {
        if (starts("]]>")) fail("']]>' in character data");
        if (!legal_char(static_cast<unsigned char>(s_[pos_]))) fail("illegal character in content");
        ++pos_;
      }
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int depth_ = 0;
  std::size_t roots_ = 0;
  std::vector<Element> elements_;
};

inline std::optional<std::string> well_formed(const std::string& text) { return Checker(text).run(); }

}  // namespace xmlcheck
