#include "lshift/text.hpp"

#include <algorithm>
#include <sstream>

namespace lshift {

TokenIds tokenize(std::string_view caption, int max_tokens) {
  TokenIds ids;
  std::istringstream words{std::string(caption)};
  std::string word;
  while (words >> word) {
    const auto it = std::find(kVocabulary.begin(), kVocabulary.end(), word);
    if (it == kVocabulary.end() || it - kVocabulary.begin() <= kNullId) throw VocabularyError(word);
    ids.push_back(it - kVocabulary.begin());
  }
  if (static_cast<int>(ids.size()) > max_tokens)
    throw ConfigError("caption has " + std::to_string(ids.size()) + " words, limit is " +
                      std::to_string(max_tokens));
  ids.resize(static_cast<std::size_t>(max_tokens), kPadId);
  return ids;
}

std::string detokenize(const TokenIds& ids) {
  std::string out;
  for (auto id : ids) {
    if (id == kPadId) continue;
    if (id < 0 || id >= static_cast<std::int64_t>(kVocabulary.size()))
      throw ShapeError("token id out of range: " + std::to_string(id));
    if (!out.empty()) out += ' ';
    out += kVocabulary[static_cast<std::size_t>(id)];
  }
  return out;
}

TextCondition null_condition(int max_tokens) {
  TextCondition c;
  c.token_ids.assign(static_cast<std::size_t>(max_tokens), kPadId);
  c.token_ids[0] = kNullId;
  c.is_null = true;
  return c;
}

std::vector<std::string> vocabulary_list() { return {kVocabulary.begin(), kVocabulary.end()}; }

template <class T>
Tensor<T> embed(const TokenIds& ids, const Tensor<T>& token_table, const Tensor<T>& position_table) {
  if (position_table.rank() != 2 || static_cast<std::int64_t>(ids.size()) > position_table.dim(0))
    throw ShapeError("embed: sequence longer than the positional table");
  const Tensor<T> tok = embedding<T>(ids, token_table);
  TokenIds positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i);
  return add(tok, embedding<T>(positions, position_table));
}

template <class T>
void init_text_params(ParamStore<T>& params, int max_tokens, int dim, Rng& rng) {
  const auto vocab = static_cast<std::int64_t>(kVocabulary.size());
  params.add("text.token_embedding", Tensor<T>::randn({vocab, dim}, rng));
  params.add("text.position_embedding",
             scale(Tensor<T>::randn({max_tokens, dim}, rng), static_cast<T>(0.1)).detach());
}

template <class T>
Tensor<T> encode_text(const ParamStore<T>& params, const std::vector<TokenIds>& tokens) {
  if (tokens.empty()) throw ShapeError("encode_text: empty batch");
  const Tensor<T>& table = params.at("text.token_embedding");
  const Tensor<T>& pos = params.at("text.position_embedding");
  const auto len = static_cast<std::int64_t>(tokens[0].size());
  TokenIds flat;
  TokenIds positions;
  for (const auto& seq : tokens) {
    if (static_cast<std::int64_t>(seq.size()) != len)
      throw ShapeError("encode_text: token sequences differ in length");
    flat.insert(flat.end(), seq.begin(), seq.end());
    for (std::int64_t i = 0; i < len; ++i) positions.push_back(i);
  }
  if (len > pos.dim(0)) throw ShapeError("encode_text: sequence longer than the positional table");
  const auto batch = static_cast<std::int64_t>(tokens.size());
  const auto dim = table.dim(1);
  return add(embedding<T>(flat, table), embedding<T>(positions, pos)).reshape({batch, len, dim});
}

template Tensor<float> embed(const TokenIds&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> embed(const TokenIds&, const Tensor<double>&, const Tensor<double>&);
template void init_text_params(ParamStore<float>&, int, int, Rng&);
template void init_text_params(ParamStore<double>&, int, int, Rng&);
template Tensor<float> encode_text(const ParamStore<float>&, const std::vector<TokenIds>&);
template Tensor<double> encode_text(const ParamStore<double>&, const std::vector<TokenIds>&);

}  // namespace lshift
