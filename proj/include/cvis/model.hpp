#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "cvis/core/error.hpp"

namespace cvis {

/// A deterministic model z -> QoI with an optional limit state g = l - QoI.
///
/// When a threshold is attached, the estimation target Y(z) is the failure
/// indicator [g(z) < 0]; otherwise Y(z) is the QoI itself. Evaluations must be
/// pure functions of z so that models can be shared across threads.
class Model {
public:
    using Response = std::function<double(std::span<const double>)>;

    Model(std::string name, std::size_t dimension, Response response, double cost = 1.0)
        : name_(std::move(name)), dimension_(dimension), response_(std::move(response)), cost_(cost) {
        require(dimension_ > 0, "model dimension must be positive");
        require(static_cast<bool>(response_), "model response must be callable");
        require(cost_ > 0.0, "model cost must be positive");
    }

    [[nodiscard]] Model with_threshold(double threshold) const {
        Model m = *this;
        m.threshold_ = threshold;
        return m;
    }

    [[nodiscard]] Model with_cost(double cost) const {
        require(cost > 0.0, "model cost must be positive");
        Model m = *this;
        m.cost_ = cost;
        return m;
    }

    [[nodiscard]] Model with_exact_mean(double mean) const {
        Model m = *this;
        m.exact_mean_ = mean;
        return m;
    }

    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] std::size_t dimension() const noexcept { return dimension_; }
    [[nodiscard]] double cost() const noexcept { return cost_; }
    [[nodiscard]] std::optional<double> threshold() const noexcept { return threshold_; }
    [[nodiscard]] bool has_limit_state() const noexcept { return threshold_.has_value(); }
    /// Exact E_p[Y] when known analytically.
    [[nodiscard]] std::optional<double> exact_mean() const noexcept { return exact_mean_; }

    [[nodiscard]] double response(std::span<const double> z) const {
        check_dimension(z);
        return response_(z);
    }

    [[nodiscard]] double limit_state(std::span<const double> z) const {
        if (!threshold_) throw InvalidArgument("model '" + name_ + "' has no limit state threshold");
        return *threshold_ - response(z);
    }

    [[nodiscard]] bool fails(std::span<const double> z) const { return limit_state(z) < 0.0; }

    /// Y(z): the failure indicator if a threshold is attached, else the QoI.
    [[nodiscard]] double evaluate(std::span<const double> z) const {
        if (!threshold_) return response(z);
        return limit_state(z) < 0.0 ? 1.0 : 0.0;
    }

    /// Y(z) computed from an already evaluated response value.
    [[nodiscard]] double output_from_response(double response_value) const {
        if (!threshold_) return response_value;
        return (*threshold_ - response_value) < 0.0 ? 1.0 : 0.0;
    }

private:
    void check_dimension(std::span<const double> z) const {
        if (z.size() != dimension_)
            throw DimensionMismatch("model '" + name_ + "' expects dimension " + std::to_string(dimension_) +
                                    ", got " + std::to_string(z.size()));
    }

    std::string name_;
    std::size_t dimension_;
    Response response_;
    double cost_;
    std::optional<double> threshold_;
    std::optional<double> exact_mean_;
};

} // namespace cvis
