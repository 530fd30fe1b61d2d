#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cst/matrix.hpp"
#include "cst/rng.hpp"

namespace cst {

// --- quadratic network f(x) = θᵀ (φᵀx)^{⊙2} ---------------------------------

struct QuadraticNet {
    Matrix phi;                 ///< d×m
    std::vector<double> theta;  ///< m

    void validate() const;
};

/// Squared projections (φᵀx)^{⊙2} for every row of x; n×m.
Matrix quad_features(const Matrix& phi, const Matrix& x);
std::vector<double> quad_forward(const QuadraticNet& net, const Matrix& x);
/// Nearest point of {-1, 0, +1}; |raw| == 0.5 exactly resolves to 0.
double quad_round(double raw);
std::vector<double> quad_round(std::span<const double> raw);

// --- MLP feature extractor with named linear heads ---------------------------

class UnknownHead : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// y = tanh(x W + b); weight is in×out, bias 1×out.
struct DenseLayer {
    Matrix weight;
    Matrix bias;
};

/// logits = h W + b; weight is m×K, bias 1×K.
struct LinearHead {
    Matrix weight;
    Matrix bias;
};

struct MlpShape {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden = {32};
    std::size_t feature_dim = 16;
    std::size_t num_classes = 2;
};

class MlpModel {
public:
    MlpModel() = default;
    MlpModel(std::vector<DenseLayer> layers, std::size_t num_classes);

    /// Random extractor plus a random "source" head.
    static MlpModel create(const MlpShape& shape, RngStream& rng);

    std::size_t input_dim() const;
    std::size_t feature_dim() const;
    std::size_t num_classes() const { return num_classes_; }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    bool has_head(const std::string& name) const { return heads_.contains(name); }
    const LinearHead& head(const std::string& name) const;
    LinearHead& head(const std::string& name);
    void set_head(const std::string& name, LinearHead head);
    const std::map<std::string, LinearHead>& heads() const { return heads_; }

    static LinearHead random_head(std::size_t feature_dim, std::size_t num_classes, RngStream& rng);

private:
    std::vector<DenseLayer> layers_;
    std::map<std::string, LinearHead> heads_;
    std::size_t num_classes_ = 0;
};

/// Activations of every extractor layer; front() is the input, back() the features.
struct ExtractorCache {
    std::vector<Matrix> activations;
    const Matrix& features() const { return activations.back(); }
};

ExtractorCache extract(const MlpModel& model, const Matrix& x);
Matrix head_logits(const LinearHead& head, const Matrix& features);

struct Prediction {
    Matrix logits;
    Matrix probabilities;
    std::vector<int> labels;
};

Prediction predict_from_logits(Matrix logits);
Prediction mlp_forward(const MlpModel& model, const std::string& head, const Matrix& x);

struct HeadBackward {
    LinearHead grad;
    Matrix d_features;
};

HeadBackward head_backward(const LinearHead& head, const Matrix& features, const Matrix& d_logits);
std::vector<DenseLayer> extractor_backward(const MlpModel& model, const ExtractorCache& cache,
                                           const Matrix& d_features);

struct ModelGrad {
    std::vector<DenseLayer> extractor;
    LinearHead head;
};

/// Gradient of any scalar loss whose derivative w.r.t. the head's logits is `upstream`.
ModelGrad backward(const MlpModel& model, const std::string& head, const Matrix& x,
                   const Matrix& upstream);

// --- parameter vectors ---------------------------------------------------------

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers);
LinearHead zeros_like(const LinearHead& head);
void axpy(double scale, const std::vector<DenseLayer>& x, std::vector<DenseLayer>& y);
void axpy(double scale, const LinearHead& x, LinearHead& y);

std::size_t parameter_count(const std::vector<DenseLayer>& layers);
/// Concatenated weights then biases of every layer, as a column.
Matrix flatten(const std::vector<DenseLayer>& layers);
Matrix flatten(const LinearHead& head);
void unflatten(const Matrix& flat, std::vector<DenseLayer>& layers);
void unflatten(const Matrix& flat, LinearHead& head);

// --- snapshots -----------------------------------------------------------------

/// One line per tensor: `name rows cols v0 v1 ...` (row-major, %.17g).
void save_model(std::ostream& out, const MlpModel& model);
MlpModel load_model(std::istream& in);

}  // namespace cst
