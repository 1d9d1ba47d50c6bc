#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lshift/diffusion.hpp"
#include "lshift/params.hpp"
#include "lshift/rng.hpp"

namespace lshift {

inline constexpr std::array<std::string_view, 13> kVocabulary = {
    "<pad>", "<null>", "a",    "red",  "green", "blue", "square",
    "circle", "moving", "left", "right", "up",   "down"};
inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kNullId = 1;
inline constexpr int kDefaultMaxTokens = 8;

/// Thrown for a caption word outside the vocabulary; word() names it.
class VocabularyError : public ConfigError {
 public:
  explicit VocabularyError(std::string word)
      : ConfigError("out-of-vocabulary word: " + word), word_(std::move(word)) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

struct TextCondition {
  TokenIds token_ids;
  bool is_null = false;
};

/// Space-separated lowercase words to ids, padded with <pad> to max_tokens.
TokenIds tokenize(std::string_view caption, int max_tokens = kDefaultMaxTokens);

/// Inverse of tokenize, dropping padding.
std::string detokenize(const TokenIds& ids);

/// [<null>, <pad>, ...].
TextCondition null_condition(int max_tokens = kDefaultMaxTokens);

/// Checkpoint vocabulary listing, one token per entry.
std::vector<std::string> vocabulary_list();

/// context[i] = token_table[ids[i]] + position_table[i]; differentiable into both tables.
template <class T>
Tensor<T> embed(const TokenIds& ids, const Tensor<T>& token_table, const Tensor<T>& position_table);

/// Registers text.token_embedding (V,d) and text.position_embedding (L,d).
template <class T>
void init_text_params(ParamStore<T>& params, int max_tokens, int dim, Rng& rng);

/// Embeds one token sequence per sample into a (B, L, d) context.
template <class T>
Tensor<T> encode_text(const ParamStore<T>& params, const std::vector<TokenIds>& tokens);

}  // namespace lshift
