#include "msfa/semantic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "init.hpp"
#include "msfa/errors.hpp"

namespace msfa::semantic {

std::vector<std::string> normalize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab Vocab::build(std::span<const std::string> corpus) {
  std::set<std::string> uniq;
  for (const auto& text : corpus) {
    for (auto& t : normalize(text)) uniq.insert(std::move(t));
  }
  return from_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  for (const auto& t : tokens) {
    if (t.empty() || normalize(t) != std::vector<std::string>{t}) {
      throw ValueError("vocab token '" + t + "' is not normalized");
    }
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  return v;
}

std::uint32_t Vocab::id(std::string_view token) const {
  auto it = std::lower_bound(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end() || *it != token) return kUnk;
  return static_cast<std::uint32_t>(it - tokens_.begin()) + 1;
}

const std::string& Vocab::token(std::uint32_t id) const {
  static const std::string unk = "<unk>";
  if (id == kUnk) return unk;
  return tokens_.at(id - 1);
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocab Vocab::deserialize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) tokens.emplace_back(line);
    start = end + 1;
  }
  if (!std::is_sorted(tokens.begin(), tokens.end())) throw FormatError("vocab file is not sorted");
  return from_tokens(std::move(tokens));
}

std::vector<std::uint32_t> tokenize(const Vocab& vocab, std::string_view text) {
  std::vector<std::uint32_t> ids;
  for (const auto& t : normalize(text)) ids.push_back(vocab.id(t));
  return ids;
}

TextEncoder TextEncoder::create(ad::ParameterSet& params, const std::string& prefix, std::size_t vocab_size,
                                std::size_t dim, Rng& rng) {
  TextEncoder e;
  e.dim = dim;
  e.vocab_size = vocab_size;
  e.embedding = params.add(prefix + ".embedding", normal_tensor({vocab_size, dim}, 1.0, rng));
  e.weight = params.add(prefix + ".dense.w", detail::xavier_uniform({dim, dim}, dim, dim, rng));
  e.bias = params.add(prefix + ".dense.b", Tensor(Shape{dim}));
  return e;
}

ad::Var TextEncoder::encode(ad::Graph& g, std::span<const std::uint32_t> ids) const {
  if (ids.empty()) return g.constant(Tensor(Shape{dim}));
  // Mean pooling as a (1 x V) weight row times the embedding table.
  Tensor weights(Shape{1, vocab_size});
  const double w = 1.0 / static_cast<double>(ids.size());
  for (auto id : ids) {
    if (id >= vocab_size) throw ValueError("token id " + std::to_string(id) + " outside vocabulary");
    weights[id] += w;
  }
  auto pooled = ad::reshape(ad::matmul(g.constant(std::move(weights)), g.param(embedding)), {dim});
  return ad::tanh(ad::matmul(g.param(weight), pooled) + g.param(bias));
}

RegionDecoupler RegionDecoupler::create(ad::ParameterSet& params, const std::string& prefix, std::size_t dim,
                                        Rng& rng) {
  RegionDecoupler d;
  d.dim = dim;
  const char* names[3] = {"wt", "tc", "et"};
  for (int r = 0; r < 3; ++r) {
    d.weight[r] = params.add(prefix + "." + names[r] + ".w", detail::xavier_uniform({dim, dim}, dim, dim, rng));
  }
  return d;
}

std::array<ad::Var, 3> RegionDecoupler::decouple(ad::Graph& g, ad::Var s) const {
  return {ad::matmul(g.param(weight[0]), s), ad::matmul(g.param(weight[1]), s), ad::matmul(g.param(weight[2]), s)};
}

}  // namespace msfa::semantic
