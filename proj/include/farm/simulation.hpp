#pragma once

#include "farm/covtest.hpp"
#include "farm/factors.hpp"
#include "farm/json_io.hpp"
#include "farm/lasso.hpp"
#include "farm/panel.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace farm {

// Y_it = Lambda_i'F_t + W_it,  F_t = a F_{t-1} + E_t,  W_it = phi W_{i,t-1} + U_it,
// U_1t = theta_12 U_2t + ... + theta_15 U_5t + V_1t,  U_it = V_it for i > 1.
struct SimulationConfig {
    Index T = 100;
    Index n = 50;
    int r = 3;
    double phi = 0.0;
    std::array<double, 4> theta{0.0, 0.0, 0.0, 0.0};
    double factor_ar = 0.8;
    double v_variance = 0.25;
    double loading_mean_first = -6.0;
    double loading_sd_first = 0.2;
    double loading_mean_rest = 2.0;
    double loading_sd_rest = 1.0;
    int replications = 500;
    std::uint64_t seed = 0;
    int burn_in = 500;

    static constexpr std::array<double, 4> power_theta{0.8, 0.9, -0.7, 0.5};
    void validate() const;
};

struct SimulatedPanel {
    PanelData panel;
    MatrixXd true_F;       // T x r
    MatrixXd true_Lambda;  // n x r
    MatrixXd true_U;       // n x T
    MatrixXd true_W;       // n x T
};

/// One replication; fully determined by (config.seed, replication).
SimulatedPanel simulate_dgp(const SimulationConfig& config, std::uint64_t replication);

enum class Scenario { KnownFactors, KnownR, EigenvalueRatio, IC1, IC2, IC3, IC4 };
Scenario parse_scenario(const std::string& text);
std::string to_string(Scenario scenario);

/// Idiosyncratic residuals for a scenario: regression on [1, true F] when the
/// factors are known, otherwise PCA of the demeaned panel with r fixed at the
/// truth or selected by the matching rule. chosen_r receives the count used.
MatrixXd scenario_residuals(const SimulatedPanel& sim, Scenario scenario, int true_r, int* chosen_r = nullptr);

struct SizePowerResult {
    Scenario scenario = Scenario::KnownFactors;
    Index T = 0;
    Index n = 0;
    int replications = 0;
    std::vector<double> levels;
    std::vector<double> rejection;    // per level
    std::vector<double> p_values;     // per replication
    std::vector<double> statistics;   // per replication
    std::vector<int> chosen_r;        // per replication
    std::vector<std::vector<char>> rejects;  // [replication][level]
};

/// Test of D = {(1, j): j > 1}, null zero, on scenario residuals, replicated.
/// Replication b uses bootstrap seed stream_seed(test.seed, b).
SizePowerResult run_size_power(const SimulationConfig& config, Scenario scenario, const std::vector<double>& levels,
                               const TestConfig& test);

/// Chosen factor counts across replications for a selection rule applied to
/// the demeaned panel.
std::vector<int> factor_count_frequencies(const SimulationConfig& config, const FactorRule& rule);

struct InfoGainsResult {
    Index T = 0;
    Index n = 0;
    int folds = 5;
    std::string factor_rule;
    std::vector<double> sr, pcr, farm;  // per replication, averaged over folds
    double mean_sr = 0.0, mean_pcr = 0.0, mean_farm = 0.0;
    double farm_beats_pcr = 0.0;  // share of replications with farm < pcr
    double farm_beats_sr = 0.0;
};

/// Contiguous-block cross-validation for predicting series 1 from the rest
/// by sparse regression, principal component regression and the
/// factor-augmented sparse predictor.
InfoGainsResult run_info_gains(const SimulationConfig& config, const FactorRule& rule, int folds = 5,
                               const PathOptions& path = {});

/// Median over t of ||Fhat_t - H F_t|| for PCA with the true factor count.
double factor_rotation_error(const SimulatedPanel& sim);

/// Git-style blob SHA-1 of text ("blob <len>\0" prefix), lowercase hex.
std::string content_hash(const std::string& text);

Json to_json(const SimulationConfig& config);

void write_size_power_csv(const std::vector<SizePowerResult>& rows, const std::filesystem::path& path);
void write_info_gains_csv(const std::vector<InfoGainsResult>& rows, const std::filesystem::path& path);

}  // namespace farm
