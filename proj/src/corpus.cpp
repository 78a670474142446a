#include "deid/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "deid/util.hpp"

namespace deid::corpus {

namespace {

// --- UTF-8 ------------------------------------------------------------------
// Offsets in this module count Unicode scalar values. Scalar <-> byte maps are
// built once per document.

struct Utf8View {
  std::vector<uint32_t> scalars;
  std::vector<size_t> byte_of;  // byte offset of each scalar; size = scalars.size()+1

  explicit Utf8View(const std::string& s) {
    size_t i = 0;
    while (i < s.size()) {
      byte_of.push_back(i);
      const auto b0 = static_cast<unsigned char>(s[i]);
      uint32_t cp = b0;
      size_t len = 1;
      if (b0 >= 0xF0) {
        len = 4;
        cp = b0 & 0x07u;
      } else if (b0 >= 0xE0) {
        len = 3;
        cp = b0 & 0x0Fu;
      } else if (b0 >= 0xC0) {
        len = 2;
        cp = b0 & 0x1Fu;
      }
      if (i + len > s.size()) {
        throw ParseError("invalid UTF-8 sequence at byte " + std::to_string(i));
      }
      for (size_t k = 1; k < len; ++k) {
        cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3Fu);
      }
      scalars.push_back(cp);
      i += len;
    }
    byte_of.push_back(s.size());
  }

  size_t size() const { return scalars.size(); }

  std::string substr(const std::string& s, size_t from, size_t to) const {
    return s.substr(byte_of[from], byte_of[to] - byte_of[from]);
  }
};

size_t scalar_length(const std::string& s) {
  size_t n = 0;
  for (char c : s)
    if ((static_cast<unsigned char>(c) & 0xC0u) != 0x80u) ++n;
  return n;
}

bool is_ws(uint32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}
bool is_digit(uint32_t c) { return c >= '0' && c <= '9'; }
bool is_ascii_lower(uint32_t c) { return c >= 'a' && c <= 'z'; }
bool is_ascii_upper(uint32_t c) { return c >= 'A' && c <= 'Z'; }
// non-ASCII scalars count as word characters
bool is_word(uint32_t c) {
  return is_digit(c) || is_ascii_lower(c) || is_ascii_upper(c) || c >= 0x80;
}

const std::array<const char*, kNumPhiCategories> kPhiNames = {
    "PATIENT", "DOCTOR", "HOSPITAL", "DATE",  "AGE",     "PHONE",
    "ID",      "CITY",   "STATE",    "COUNTRY", "PROFESSION", "OTHER"};

const std::array<const char*, kNumCasingCategories> kCasingNames = {
    "numeric",       "mainly_numeric", "all_lower", "all_upper",
    "initial_upper", "contains_digit", "other"};

}  // namespace

const char* to_string(PhiCategory c) { return kPhiNames[static_cast<int>(c)]; }

std::optional<PhiCategory> phi_category_from_string(const std::string& s) {
  for (int i = 0; i < kNumPhiCategories; ++i)
    if (s == kPhiNames[i]) return static_cast<PhiCategory>(i);
  return std::nullopt;
}

const char* to_string(CasingCategory c) { return kCasingNames[static_cast<int>(c)]; }

std::string to_string(const BioLabel& l) {
  switch (l.kind) {
    case BioLabel::Kind::O:
      return "O";
    case BioLabel::Kind::B:
      return std::string("B-") + to_string(l.category);
    case BioLabel::Kind::I:
      return std::string("I-") + to_string(l.category);
  }
  return "O";
}

std::optional<BioLabel> bio_label_from_string(const std::string& s) {
  if (s == "O") return BioLabel::outside();
  if (s.size() < 3 || s[1] != '-') return std::nullopt;
  auto cat = phi_category_from_string(s.substr(2));
  if (!cat) return std::nullopt;
  if (s[0] == 'B') return BioLabel::begin(*cat);
  if (s[0] == 'I') return BioLabel::inside(*cat);
  return std::nullopt;
}

// --- casing -----------------------------------------------------------------

CasingCategory casing_of(const std::string& token_text) {
  if (token_text.empty()) throw std::invalid_argument("casing_of: empty token");
  Utf8View v(token_text);
  size_t digits = 0, lowers = 0, uppers = 0;
  for (uint32_t c : v.scalars) {
    if (is_digit(c)) ++digits;
    if (is_ascii_lower(c)) ++lowers;
    if (is_ascii_upper(c)) ++uppers;
  }
  const size_t n = v.size();
  if (digits == n) return CasingCategory::NUMERIC;
  if (2 * digits > n) return CasingCategory::MAINLY_NUMERIC;
  if (lowers == n) return CasingCategory::ALL_LOWER;
  if (uppers == n) return CasingCategory::ALL_UPPER;
  if (is_ascii_upper(v.scalars[0])) return CasingCategory::INITIAL_UPPER;
  if (digits > 0) return CasingCategory::CONTAINS_DIGIT;
  return CasingCategory::OTHER;
}

// --- tokenizer --------------------------------------------------------------

std::vector<Token> tokenize(const std::string& text, size_t base_offset) {
  Utf8View v(text);
  std::vector<Token> out;
  auto emit = [&](size_t from, size_t to) {
    Token t;
    t.text = v.substr(text, from, to);
    t.start = base_offset + from;
    t.end = base_offset + to;
    t.casing = casing_of(t.text);
    out.push_back(std::move(t));
  };

  size_t i = 0;
  const size_t n = v.size();
  while (i < n) {
    const uint32_t c = v.scalars[i];
    if (is_ws(c)) {
      ++i;
      continue;
    }
    if (!is_word(c)) {
      // every punctuation character is its own token
      emit(i, i + 1);
      ++i;
      continue;
    }
    size_t j = i;
    while (j < n && is_word(v.scalars[j])) ++j;
    // split the word run where a digit run is followed by a letter run
    size_t seg = i;
    for (size_t k = i + 1; k < j; ++k) {
      if (is_digit(v.scalars[k - 1]) && !is_digit(v.scalars[k])) {
        emit(seg, k);
        seg = k;
      }
    }
    emit(seg, j);
    i = j;
  }
  return out;
}

// --- sentence splitting -----------------------------------------------------

std::vector<Sentence> split_sentences(const Document& doc) {
  Utf8View v(doc.text);
  const size_t n = v.size();
  std::vector<size_t> boundaries;  // scalar offsets where a new sentence starts

  for (size_t i = 0; i < n; ++i) {
    const uint32_t c = v.scalars[i];

    // terminal punctuation + whitespace + capital
    if (c == '.' || c == '!' || c == '?') {
      size_t j = i + 1;
      size_t newlines = 0;
      while (j < n && is_ws(v.scalars[j])) {
        if (v.scalars[j] == '\n') ++newlines;
        ++j;
      }
      if (j > i + 1 && j < n && is_ascii_upper(v.scalars[j])) boundaries.push_back(j);
    }

    // two or more consecutive newlines (blank line)
    if (c == '\n') {
      size_t j = i + 1;
      size_t newlines = 1;
      while (j < n && is_ws(v.scalars[j])) {
        if (v.scalars[j] == '\n') ++newlines;
        ++j;
      }
      if (newlines >= 2 && j < n) boundaries.push_back(j);
      i = j > i + 1 ? j - 1 : i;
    }
  }

  // list markers at line start: -, *, or digits followed by '.' or ')'
  for (size_t i = 0; i < n; ++i) {
    if (i != 0 && v.scalars[i - 1] != '\n') continue;
    size_t j = i;
    while (j < n && (v.scalars[j] == ' ' || v.scalars[j] == '\t')) ++j;
    if (j >= n) continue;
    const uint32_t m = v.scalars[j];
    if ((m == '-' || m == '*') && j + 1 < n && v.scalars[j + 1] == ' ') {
      boundaries.push_back(j);
    } else if (is_digit(m)) {
      size_t k = j;
      while (k < n && is_digit(v.scalars[k])) ++k;
      if (k < n && (v.scalars[k] == '.' || v.scalars[k] == ')')) boundaries.push_back(j);
    }
  }

  std::sort(boundaries.begin(), boundaries.end());
  boundaries.erase(std::unique(boundaries.begin(), boundaries.end()), boundaries.end());
  while (!boundaries.empty() && boundaries.front() == 0) boundaries.erase(boundaries.begin());

  std::vector<Token> all = tokenize(doc.text);
  std::vector<Sentence> out;
  Sentence cur;
  cur.doc_id = doc.id;
  size_t b = 0;
  for (auto& tok : all) {
    while (b < boundaries.size() && tok.start >= boundaries[b]) {
      if (!cur.tokens.empty()) {
        out.push_back(std::move(cur));
        cur = Sentence{};
        cur.doc_id = doc.id;
      }
      ++b;
    }
    cur.tokens.push_back(std::move(tok));
  }
  if (!cur.tokens.empty()) out.push_back(std::move(cur));
  return out;
}

// --- label alignment --------------------------------------------------------

std::vector<Sentence> align_labels(const Document& doc, std::vector<Sentence> sentences) {
  for (auto& sent : sentences) {
    sent.labels.assign(sent.tokens.size(), BioLabel::outside());
    int prev_span = -1;  // span index of the previous token, -1 if O
    for (size_t t = 0; t < sent.tokens.size(); ++t) {
      const Token& tok = sent.tokens[t];
      int hit = -1;
      for (size_t s = 0; s < doc.spans.size(); ++s) {
        const PhiSpan& sp = doc.spans[s];
        if (sp.start >= tok.end) break;
        if (tok.start < sp.end && sp.start < tok.end) {
          hit = static_cast<int>(s);
          break;
        }
      }
      if (hit < 0) {
        prev_span = -1;
        continue;
      }
      const PhiCategory cat = doc.spans[static_cast<size_t>(hit)].category;
      // a span continuing from a previous sentence re-begins with B-
      sent.labels[t] = (hit == prev_span) ? BioLabel::inside(cat) : BioLabel::begin(cat);
      prev_span = hit;
    }
  }
  return sentences;
}

std::vector<Sentence> sentences_of(const Document& doc) {
  return align_labels(doc, split_sentences(doc));
}

// --- XML --------------------------------------------------------------------

namespace {

struct XmlCursor {
  const std::string& s;
  size_t pos = 0;
  std::string doc_hint;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(cat("document ", doc_hint.empty() ? "<unknown>" : doc_hint,
                         ": malformed XML at byte ", pos, ": ", what));
  }

  void skip_ws() {
    while (pos < s.size() && is_ws(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  bool starts_with(const char* p) const {
    return s.compare(pos, std::strlen(p), p) == 0;
  }

  void expect(const char* p) {
    if (!starts_with(p)) fail(cat("expected '", p, "'"));
    pos += std::strlen(p);
  }

  void skip_prolog() {
    skip_ws();
    while (pos < s.size()) {
      if (starts_with("<?")) {
        const size_t e = s.find("?>", pos);
        if (e == std::string::npos) fail("unterminated processing instruction");
        pos = e + 2;
      } else if (starts_with("<!--")) {
        const size_t e = s.find("-->", pos);
        if (e == std::string::npos) fail("unterminated comment");
        pos = e + 3;
      } else {
        break;
      }
      skip_ws();
    }
  }

  std::string read_name() {
    const size_t start = pos;
    while (pos < s.size() &&
           (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_' || s[pos] == '-' ||
            s[pos] == ':')) {
      ++pos;
    }
    if (pos == start) fail("expected a name");
    return s.substr(start, pos - start);
  }

  std::string unescape(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '&') {
        out += raw[i];
        continue;
      }
      const size_t e = raw.find(';', i);
      if (e == std::string::npos) fail("unterminated entity");
      const std::string ent = raw.substr(i + 1, e - i - 1);
      if (ent == "lt")
        out += '<';
      else if (ent == "gt")
        out += '>';
      else if (ent == "amp")
        out += '&';
      else if (ent == "quot")
        out += '"';
      else if (ent == "apos")
        out += '\'';
      else if (!ent.empty() && ent[0] == '#')
        fail("numeric entities are not supported");
      else
        fail(cat("unknown entity '&", ent, ";'"));
      i = e;
    }
    return out;
  }

  // attributes up to '>' or '/>'; returns true if the element was self-closing
  bool read_attrs(std::vector<std::pair<std::string, std::string>>& attrs) {
    for (;;) {
      skip_ws();
      if (pos >= s.size()) fail("unterminated element");
      if (starts_with("/>")) {
        pos += 2;
        return true;
      }
      if (s[pos] == '>') {
        ++pos;
        return false;
      }
      const std::string name = read_name();
      skip_ws();
      expect("=");
      skip_ws();
      if (pos >= s.size() || (s[pos] != '"' && s[pos] != '\'')) fail("expected quoted value");
      const char q = s[pos++];
      const size_t e = s.find(q, pos);
      if (e == std::string::npos) fail("unterminated attribute value");
      attrs.emplace_back(name, unescape(s.substr(pos, e - pos)));
      pos = e + 1;
    }
  }

  // element content up to the closing tag; CDATA kept verbatim
  std::string read_content(const std::string& elem) {
    std::string out;
    for (;;) {
      if (pos >= s.size()) fail(cat("unterminated <", elem, ">"));
      if (starts_with("<![CDATA[")) {
        pos += 9;
        const size_t e = s.find("]]>", pos);
        if (e == std::string::npos) fail("unterminated CDATA");
        out += s.substr(pos, e - pos);
        pos = e + 3;
      } else if (starts_with("</")) {
        pos += 2;
        const std::string name = read_name();
        if (name != elem) fail(cat("mismatched closing tag </", name, ">"));
        skip_ws();
        expect(">");
        return out;
      } else if (s[pos] == '<') {
        fail(cat("unexpected element inside <", elem, ">"));
      } else {
        const size_t e = s.find('<', pos);
        if (e == std::string::npos) fail(cat("unterminated <", elem, ">"));
        out += unescape(s.substr(pos, e - pos));
        pos = e;
      }
    }
  }
};

std::string attr_or(const std::vector<std::pair<std::string, std::string>>& attrs,
                    const std::string& name, const std::string& fallback) {
  for (auto& [k, v] : attrs)
    if (k == name) return v;
  return fallback;
}

size_t parse_offset(const std::string& v, const std::string& doc_id, const std::string& attr) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError(cat("document ", doc_id, ": tag attribute ", attr,
                         " is not a non-negative integer: '", v, "'"));
  }
  return static_cast<size_t>(std::stoull(v));
}

std::string escape_attr(const std::string& v) {
  std::string out;
  for (char c : v) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Document parse_document(const std::string& xml_bytes) {
  XmlCursor cur{xml_bytes, 0, ""};
  cur.skip_prolog();
  cur.expect("<");
  const std::string root = cur.read_name();
  std::vector<std::pair<std::string, std::string>> root_attrs;
  if (cur.read_attrs(root_attrs)) cur.fail("root element must not be self-closing");

  Document doc;
  doc.id = attr_or(root_attrs, "id", "");
  cur.doc_hint = doc.id;

  bool saw_text = false, saw_tags = false;
  for (;;) {
    cur.skip_ws();
    if (cur.starts_with("</")) break;
    cur.expect("<");
    const std::string elem = cur.read_name();
    std::vector<std::pair<std::string, std::string>> attrs;
    const bool self_closed = cur.read_attrs(attrs);
    if (elem == "TEXT") {
      if (saw_text) cur.fail("duplicate TEXT element");
      saw_text = true;
      doc.text = self_closed ? "" : cur.read_content("TEXT");
    } else if (elem == "TAGS") {
      if (saw_tags) cur.fail("duplicate TAGS element");
      saw_tags = true;
      if (!self_closed) {
        for (;;) {
          cur.skip_ws();
          if (cur.starts_with("</")) {
            cur.pos += 2;
            const std::string name = cur.read_name();
            if (name != "TAGS") cur.fail("mismatched closing tag inside TAGS");
            cur.skip_ws();
            cur.expect(">");
            break;
          }
          cur.expect("<");
          cur.read_name();  // element name is informational; TYPE carries the category
          std::vector<std::pair<std::string, std::string>> tag_attrs;
          if (!cur.read_attrs(tag_attrs)) cur.fail("tag elements must be self-closing");
          PhiSpan span;
          span.start = parse_offset(attr_or(tag_attrs, "start", ""), doc.id, "start");
          span.end = parse_offset(attr_or(tag_attrs, "end", ""), doc.id, "end");
          span.text = attr_or(tag_attrs, "text", "");
          const std::string type = attr_or(tag_attrs, "TYPE", "");
          auto category = phi_category_from_string(type);
          if (!category) {
            throw ParseError(cat("document ", doc.id, ": unknown PHI category '", type,
                                 "' at offset ", span.start));
          }
          span.category = *category;
          doc.spans.push_back(std::move(span));
        }
      }
    } else {
      cur.fail(cat("unexpected element <", elem, ">"));
    }
  }
  if (!saw_text) cur.fail("missing TEXT element");
  if (!saw_tags) cur.fail("missing TAGS element");

  // validate spans against the text
  Utf8View v(doc.text);
  std::sort(doc.spans.begin(), doc.spans.end(),
            [](const PhiSpan& a, const PhiSpan& b) { return a.start < b.start; });
  size_t prev_end = 0;
  for (const PhiSpan& sp : doc.spans) {
    if (sp.start >= sp.end || sp.end > v.size()) {
      throw ParseError(cat("document ", doc.id, ": offset out of bounds for span [", sp.start,
                           ", ", sp.end, ") in text of length ", v.size()));
    }
    const std::string actual = v.substr(doc.text, sp.start, sp.end);
    if (actual != sp.text) {
      throw ParseError(cat("document ", doc.id, ": span text mismatch at offset ", sp.start,
                           ": tag says '", sp.text, "', text has '", actual, "'"));
    }
    if (sp.start < prev_end) {
      throw ParseError(cat("document ", doc.id, ": overlapping spans at offset ", sp.start));
    }
    prev_end = sp.end;
  }
  return doc;
}

std::string write_document(const Document& doc) {
  std::string out = "<record id=\"" + escape_attr(doc.id) + "\">\n  <TEXT><![CDATA[";
  // a literal "]]>" in the text would close the section early; split it
  std::string body = doc.text;
  size_t p = 0;
  while ((p = body.find("]]>", p)) != std::string::npos) {
    body.replace(p, 3, "]]]]><![CDATA[>");
    p += 15;
  }
  out += body;
  out += "]]></TEXT>\n  <TAGS>\n";
  std::vector<PhiSpan> spans = doc.spans;
  std::sort(spans.begin(), spans.end(),
            [](const PhiSpan& a, const PhiSpan& b) { return a.start < b.start; });
  for (size_t i = 0; i < spans.size(); ++i) {
    const PhiSpan& sp = spans[i];
    out += cat("    <", to_string(sp.category), " id=\"P", i, "\" start=\"", sp.start,
               "\" end=\"", sp.end, "\" text=\"", escape_attr(sp.text), "\" TYPE=\"",
               to_string(sp.category), "\"/>\n");
  }
  out += "  </TAGS>\n</record>\n";
  return out;
}

Document render_sentences(const std::string& doc_id, const std::vector<Sentence>& sentences) {
  Document doc;
  doc.id = doc_id;
  size_t offset = 0;  // scalar offset
  for (size_t si = 0; si < sentences.size(); ++si) {
    const Sentence& sent = sentences[si];
    if (si > 0) {
      doc.text += '\n';
      ++offset;
    }
    int open = -1;  // index into doc.spans of the span under construction
    for (size_t t = 0; t < sent.tokens.size(); ++t) {
      if (t > 0) {
        doc.text += ' ';
        ++offset;
      }
      const std::string& text = sent.tokens[t].text;
      const size_t len = scalar_length(text);
      const BioLabel label = sent.labels.empty() ? BioLabel::outside() : sent.labels[t];
      if (label.kind == BioLabel::Kind::B ||
          (label.kind == BioLabel::Kind::I &&
           (open < 0 || doc.spans[static_cast<size_t>(open)].category != label.category))) {
        doc.spans.push_back({offset, offset + len, label.category, text});
        open = static_cast<int>(doc.spans.size()) - 1;
      } else if (label.kind == BioLabel::Kind::I) {
        PhiSpan& sp = doc.spans[static_cast<size_t>(open)];
        sp.end = offset + len;
        sp.text += ' ' + text;
      } else {
        open = -1;
      }
      doc.text += text;
      offset += len;
    }
  }
  return doc;
}

}  // namespace deid::corpus
