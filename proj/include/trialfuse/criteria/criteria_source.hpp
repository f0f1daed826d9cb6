// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "trialfuse/criteria/embedding_store.hpp"
#include "trialfuse/criteria/multi_level.hpp"

namespace trialfuse {

/// The frozen language-model branch as seen by the rest of the system. It has
/// no trainable parameters; implementations differ only in where the four
/// levels come from.
class CriteriaSource {
public:
    virtual ~CriteriaSource() = default;
    [[nodiscard]] virtual MultiLevelCriteriaEmbedding encode(const std::string& trial_id,
                                                             const std::string& criteria_text) const = 0;
    [[nodiscard]] virtual std::size_t d_llm() const = 0;
};

class ToyCriteriaEncoder final : public CriteriaSource {
public:
    explicit ToyCriteriaEncoder(std::uint64_t seed = 0, std::size_t d_llm = kToyCriteriaWidth)
        : seed_(seed), d_llm_(d_llm)
    {
    }

    [[nodiscard]] MultiLevelCriteriaEmbedding encode(const std::string&, const std::string& text) const override
    {
        return toy_encode(text, seed_, d_llm_);
    }
    [[nodiscard]] std::size_t d_llm() const override { return d_llm_; }

private:
    std::uint64_t seed_;
    std::size_t d_llm_;
};

class StoreCriteriaEncoder final : public CriteriaSource {
public:
    explicit StoreCriteriaEncoder(std::string path) : store_(std::move(path)) {}

    [[nodiscard]] MultiLevelCriteriaEmbedding encode(const std::string& trial_id, const std::string&) const override
    {
        return store_.load(trial_id);
    }
    [[nodiscard]] std::size_t d_llm() const override { return store_.d_llm(); }
    [[nodiscard]] const EmbeddingStore& store() const noexcept { return store_; }

private:
    EmbeddingStore store_;
};

} // namespace trialfuse
