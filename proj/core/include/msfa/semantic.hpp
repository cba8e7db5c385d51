#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msfa/autodiff.hpp"
#include "msfa/rng.hpp"

// Text -> global semantic vector, and its split into region-specific vectors.
namespace msfa::semantic {

inline constexpr std::uint32_t kUnk = 0;

// Lowercases and splits on anything that is not a letter or digit.
std::vector<std::string> normalize(std::string_view text);

// Token -> id map. Known tokens are sorted and numbered from 1; id 0 is UNK.
class Vocab {
 public:
  Vocab() = default;
  static Vocab build(std::span<const std::string> corpus);
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::uint32_t id(std::string_view token) const;
  const std::string& token(std::uint32_t id) const;
  // Including the UNK slot.
  std::size_t size() const noexcept { return tokens_.size() + 1; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  // Sorted newline-delimited tokens (UNK is implicit and not written).
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  std::vector<std::string> tokens_;
};

std::vector<std::uint32_t> tokenize(const Vocab& vocab, std::string_view text);

// Mean of embedding rows, then dense + tanh. Empty input gives the zero vector.
struct TextEncoder {
  ad::ParamId embedding;  // [V, d]
  ad::ParamId weight;     // [d, d]
  ad::ParamId bias;       // [d]
  std::size_t dim = 0;
  std::size_t vocab_size = 0;

  static TextEncoder create(ad::ParameterSet& params, const std::string& prefix, std::size_t vocab_size,
                            std::size_t dim, Rng& rng);
  ad::Var encode(ad::Graph& g, std::span<const std::uint32_t> ids) const;
};

// S_region = W_region * s for region in (WT, TC, ET).
struct RegionDecoupler {
  std::array<ad::ParamId, 3> weight;  // each [d, d]
  std::size_t dim = 0;

  static RegionDecoupler create(ad::ParameterSet& params, const std::string& prefix, std::size_t dim, Rng& rng);
  std::array<ad::Var, 3> decouple(ad::Graph& g, ad::Var s) const;
};

}  // namespace msfa::semantic
