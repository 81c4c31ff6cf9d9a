// k-mer tokenization for nucleotide sequences and per-residue tokenization for
// proteins. Vocabularies are immutable after construction and safe to share
// across threads.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "isoformer/error.hpp"

namespace isoformer {

enum class Modality { dna = 0, rna = 1, protein = 2 };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::dna: return "dna";
    case Modality::rna: return "rna";
    case Modality::protein: return "protein";
  }
  return "?";
}

enum class AlphabetKind { nucleotide, amino_acid };

struct Alphabet {
  AlphabetKind kind;
  std::string symbols;

  static Alphabet nucleotide() { return {AlphabetKind::nucleotide, "ACGT"}; }
  static Alphabet amino_acid() { return {AlphabetKind::amino_acid, "ACDEFGHIKLMNPQRSTVWY"}; }
};

// Token id layout: specials first (PAD=0, UNK=1, optionally MASK=2), then all
// entry strings in lexicographic order.
class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  static Vocabulary build(AlphabetKind kind, int k, bool with_mask = false) {
    require(k >= 1, Errc::k_too_large, "k must be >= 1");
    if (kind == AlphabetKind::amino_acid)
      require(k == 1, Errc::k_too_large, "amino-acid vocabulary is per-residue (k=1)");
    require(k <= 8, Errc::k_too_large, "k=" + std::to_string(k) + " exceeds the 4^8 bound");

    Vocabulary v;
    v.kind_ = kind;
    v.k_ = k;
    v.mask_id_ = with_mask ? 2 : -1;

    const Alphabet alpha = kind == AlphabetKind::nucleotide ? Alphabet::nucleotide() : Alphabet::amino_acid();
    std::vector<std::string> tokens;
    if (kind == AlphabetKind::nucleotide) {
      std::string kmer(static_cast<std::size_t>(k), 'A');
      std::vector<int> digits(static_cast<std::size_t>(k), 0);
      const std::size_t total = static_cast<std::size_t>(std::pow(4.0, k) + 0.5);
      for (std::size_t n = 0; n < total; ++n) {
        for (int i = 0; i < k; ++i) kmer[static_cast<std::size_t>(i)] = alpha.symbols[static_cast<std::size_t>(digits[static_cast<std::size_t>(i)])];
        tokens.push_back(kmer);
        for (int i = k - 1; i >= 0; --i) {
          if (++digits[static_cast<std::size_t>(i)] < 4) break;
          digits[static_cast<std::size_t>(i)] = 0;
        }
      }
      if (k > 1)
        for (char c : alpha.symbols) tokens.push_back(std::string(1, c));
    } else {
      for (char c : alpha.symbols) tokens.push_back(std::string(1, c));
    }
    std::sort(tokens.begin(), tokens.end());

    int next = with_mask ? 3 : 2;
    v.id_to_token_.resize(static_cast<std::size_t>(next) + tokens.size());
    v.id_to_token_[0] = "<PAD>";
    v.id_to_token_[1] = "<UNK>";
    if (with_mask) v.id_to_token_[2] = "<MASK>";
    for (const std::string& t : tokens) {
      v.entries_.emplace(t, next);
      v.id_to_token_[static_cast<std::size_t>(next)] = t;
      ++next;
    }
    return v;
  }

  AlphabetKind kind() const { return kind_; }
  int k() const { return k_; }
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool has_mask() const { return mask_id_ >= 0; }
  int mask_id() const {
    require(mask_id_ >= 0, Errc::invalid_config, "vocabulary built without a mask token");
    return mask_id_;
  }

  int lookup(const std::string& token) const {
    auto it = entries_.find(token);
    return it == entries_.end() ? kUnkId : it->second;
  }

  const std::string& token(int id) const {
    require(id >= 0 && id < size(), Errc::id_out_of_range, "vocabulary id " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  bool is_special(int id) const { return id == kPadId || id == kUnkId || id == mask_id_; }

  // Debug dump: one `<id>\t<token>` line per entry, specials first.
  void dump(std::ostream& os) const {
    for (int id = 0; id < size(); ++id) os << id << '\t' << id_to_token_[static_cast<std::size_t>(id)] << '\n';
  }

  void dump_to_file(const std::string& path) const {
    std::ofstream os(path);
    require(os.good(), Errc::io_failure, "cannot open " + path + " for writing");
    dump(os);
  }

 private:
  AlphabetKind kind_ = AlphabetKind::nucleotide;
  int k_ = 1;
  int mask_id_ = -1;
  std::unordered_map<std::string, int> entries_;
  std::vector<std::string> id_to_token_;
};

struct TokenSequence {
  std::vector<int> ids;
  Modality modality = Modality::dna;
  std::size_t source_length = 0;
};

namespace detail {
inline char normalize_nucleotide(char c, bool is_rna, std::size_t pos) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  switch (u) {
    case 'A':
    case 'C':
    case 'G':
    case 'T':
    case 'N':
      return u;
    case 'U':
      return is_rna ? 'T' : 'U';
    default:
      fail(Errc::illegal_character,
           std::string("character '") + c + "' at position " + std::to_string(pos));
  }
}
}  // namespace detail

// Greedy left-to-right k-mer chunking; the terminal remainder shorter than k
// is emitted as single-nucleotide tokens. Chunks not present in the vocabulary
// (N runs, U outside RNA mode) map to UNK.
inline TokenSequence tokenize_nucleotide(const std::string& seq, const Vocabulary& vocab, bool is_rna) {
  require(!seq.empty(), Errc::empty_sequence, "nucleotide sequence is empty");
  require(vocab.kind() == AlphabetKind::nucleotide, Errc::invalid_config, "vocabulary is not nucleotide");

  std::string norm;
  norm.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) norm.push_back(detail::normalize_nucleotide(seq[i], is_rna, i));

  TokenSequence out;
  out.modality = is_rna ? Modality::rna : Modality::dna;
  out.source_length = seq.size();
  const std::size_t k = static_cast<std::size_t>(vocab.k());
  std::size_t i = 0;
  for (; i + k <= norm.size(); i += k) out.ids.push_back(vocab.lookup(norm.substr(i, k)));
  for (; i < norm.size(); ++i) out.ids.push_back(vocab.lookup(norm.substr(i, 1)));
  return out;
}

// One token per residue; non-canonical letters (B, J, O, U, X, Z) map to UNK.
inline TokenSequence tokenize_protein(const std::string& seq, const Vocabulary& vocab) {
  require(!seq.empty(), Errc::empty_sequence, "protein sequence is empty");
  require(vocab.kind() == AlphabetKind::amino_acid, Errc::invalid_config, "vocabulary is not amino-acid");

  TokenSequence out;
  out.modality = Modality::protein;
  out.source_length = seq.size();
  out.ids.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(seq[i])));
    require(u >= 'A' && u <= 'Z', Errc::illegal_character,
            std::string("character '") + seq[i] + "' at position " + std::to_string(i));
    out.ids.push_back(vocab.lookup(std::string(1, u)));
  }
  return out;
}

inline std::string detokenize(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string out;
  for (int id : tokens.ids) {
    require(!vocab.is_special(id), Errc::contains_unknown,
            "special token " + vocab.token(id) + " cannot be detokenized");
    out += vocab.token(id);
  }
  return out;
}

}  // namespace isoformer
