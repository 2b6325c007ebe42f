#pragma once

#include <memory>
#include <vector>

#include "cvis/densities.hpp"
#include "cvis/model.hpp"

namespace cvis {

/// A high-fidelity model Y0 and one low-fidelity model Y1 sharing an input density.
struct ModelPair {
    Model hf;
    Model lf;
    std::shared_ptr<const Density> input;

    ModelPair(Model hf_model, Model lf_model, std::shared_ptr<const Density> input_density)
        : hf(std::move(hf_model)), lf(std::move(lf_model)), input(std::move(input_density)) {
        if (!input) throw ConstructionError("model pair needs an input density");
        if (hf.dimension() != lf.dimension() || hf.dimension() != input->dimension())
            throw DimensionMismatch("model pair: models and input density differ in dimension");
    }

    [[nodiscard]] double cost_ratio() const noexcept { return hf.cost() / lf.cost(); }
    [[nodiscard]] std::vector<Model> as_list() const { return {hf, lf}; }
};

} // namespace cvis
