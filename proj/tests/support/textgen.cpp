#include "support/textgen.hpp"

#include <cctype>

#include "rat/rng.hpp"

namespace ratt {

namespace {

const char* kCommon[] = {
    "the", "of", "a", "and", "to", "in", "was", "it", "that", "with", "for",
    "as", "on", "at", "by", "from", "this", "but", "not", "they", "were",
    "which", "an", "had", "its", "after", "before", "under", "over", "near",
    "small", "large", "old", "new", "first", "last", "quiet", "bright",
    "river", "harbor", "village", "market", "garden", "letter", "journal",
    "signal", "engine", "ledger", "archive", "bridge", "tower", "road",
    "found", "kept", "carried", "returned", "described", "recorded", "sent",
    "received", "measured", "repaired", "opened", "closed", "crossed",
    "morning", "evening", "winter", "summer", "season", "yesterday", "again",
    "often", "rarely", "slowly", "finally", "together", "toward", "between"};
constexpr int kNumCommon = int(sizeof(kCommon) / sizeof(kCommon[0]));

// High-entropy names: later mentions are only predictable by copying an
// earlier one from context, which is exactly the long-range signal the
// architecture comparisons need.
std::string make_name(rat::Rng& rng) {
  const int len = 6 + int(rng.uniform_int(7));
  std::string w;
  for (int i = 0; i < len; ++i) w += char('a' + rng.uniform_int(26));
  w[0] = char(w[0] - 'a' + 'A');
  return w;
}

std::string make_code(rat::Rng& rng) {
  std::string c;
  const int len = 5 + int(rng.uniform_int(3));
  for (int i = 0; i < len; ++i) c += char('0' + rng.uniform_int(10));
  return c;
}

std::string make_doc(rat::Rng& rng) {
  // A cast of named entities and numeric codes that recur through the
  // document at distances of tens to hundreds of bytes.
  const int n_entities = 3 + int(rng.uniform_int(4));
  std::vector<std::string> entities, codes;
  for (int i = 0; i < n_entities; ++i) {
    entities.push_back(make_name(rng));
    codes.push_back(make_code(rng));
  }

  std::string doc;
  const int paragraphs = 4 + int(rng.uniform_int(4));
  for (int para = 0; para < paragraphs; ++para) {
    const int sentences = 3 + int(rng.uniform_int(4));
    for (int s = 0; s < sentences; ++s) {
      const int words = 6 + int(rng.uniform_int(9));
      std::string sent;
      for (int w = 0; w < words; ++w) {
        std::string word;
        const double roll = rng.uniform();
        if (roll < 0.16) {
          word = entities[rng.uniform_int(n_entities)];
        } else if (roll < 0.22) {
          const int e = int(rng.uniform_int(n_entities));
          word = entities[e] + " " + codes[e];
        } else {
          word = kCommon[rng.uniform_int(kNumCommon)];
        }
        if (!sent.empty()) sent += ' ';
        sent += word;
      }
      sent[0] = char(std::toupper(static_cast<unsigned char>(sent[0])));
      sent += ". ";
      doc += sent;
    }
    doc += "\n\n";
  }
  return doc;
}

}  // namespace

std::vector<std::string> make_docs(int64_t target_bytes, uint64_t seed) {
  rat::Rng rng(seed);
  std::vector<std::string> docs;
  int64_t total = 0;
  while (total < target_bytes) {
    docs.push_back(make_doc(rng));
    total += int64_t(docs.back().size()) + 1;
  }
  return docs;
}

std::string make_text(int64_t target_bytes, uint64_t seed) {
  std::string out;
  for (const std::string& d : make_docs(target_bytes, seed)) out += d;
  return out;
}

}  // namespace ratt
