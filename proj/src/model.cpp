#include "cst/model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "cst/numerics.hpp"

namespace cst {

// --- quadratic network ---------------------------------------------------------

void QuadraticNet::validate() const {
    if (phi.cols() < 2) throw ShapeError("quadratic net needs m >= 2");
    if (theta.size() != phi.cols()) {
        throw ShapeError(fmt::format("theta has {} entries for {} features", theta.size(), phi.cols()));
    }
    if (!phi.all_finite()) throw NumericalError("phi is not finite");
    for (double t : theta) {
        if (!std::isfinite(t)) throw NumericalError("theta is not finite");
    }
}

Matrix quad_features(const Matrix& phi, const Matrix& x) {
    Matrix proj = matmul(x, phi);
    for (double& v : proj.data()) v *= v;
    return proj;
}

std::vector<double> quad_forward(const QuadraticNet& net, const Matrix& x) {
    net.validate();
    const Matrix h = quad_features(net.phi, x);
    std::vector<double> out(h.rows(), 0.0);
    for (std::size_t i = 0; i < h.rows(); ++i) {
        const auto row = h.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) out[i] += net.theta[k] * row[k];
    }
    return out;
}

double quad_round(double raw) {
    if (raw > 0.5) return 1.0;
    if (raw < -0.5) return -1.0;
    return 0.0;
}

std::vector<double> quad_round(std::span<const double> raw) {
    std::vector<double> out;
    out.reserve(raw.size());
    for (double v : raw) out.push_back(quad_round(v));
    return out;
}

// --- MLP -------------------------------------------------------------------------

MlpModel::MlpModel(std::vector<DenseLayer> layers, std::size_t num_classes)
    : layers_(std::move(layers)), num_classes_(num_classes) {
    if (layers_.empty()) throw ShapeError("MLP needs at least one extractor layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
            throw ShapeError(fmt::format("layer {} bias {} vs weight {}", i, shape_string(l.bias),
                                         shape_string(l.weight)));
        }
        if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
            throw ShapeError(fmt::format("layer {} does not chain", i));
        }
    }
    if (num_classes_ < 2) throw ShapeError("MLP needs at least two classes");
}

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale, RngStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

}  // namespace

LinearHead MlpModel::random_head(std::size_t feature_dim, std::size_t num_classes, RngStream& rng) {
    return {gaussian_matrix(feature_dim, num_classes, 1.0 / std::sqrt(double(feature_dim)), rng),
            Matrix(1, num_classes)};
}

MlpModel MlpModel::create(const MlpShape& shape, RngStream& rng) {
    std::vector<std::size_t> widths{shape.input_dim};
    widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
    widths.push_back(shape.feature_dim);
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        layers.push_back({gaussian_matrix(widths[i], widths[i + 1],
                                          1.0 / std::sqrt(double(widths[i])), rng),
                          Matrix(1, widths[i + 1])});
    }
    MlpModel model(std::move(layers), shape.num_classes);
    model.set_head("source", random_head(shape.feature_dim, shape.num_classes, rng));
    return model;
}

std::size_t MlpModel::input_dim() const { return layers_.front().weight.rows(); }
std::size_t MlpModel::feature_dim() const { return layers_.back().weight.cols(); }

const LinearHead& MlpModel::head(const std::string& name) const {
    auto it = heads_.find(name);
    if (it == heads_.end()) throw UnknownHead("unknown head: " + name);
    return it->second;
}

LinearHead& MlpModel::head(const std::string& name) {
    auto it = heads_.find(name);
    if (it == heads_.end()) throw UnknownHead("unknown head: " + name);
    return it->second;
}

void MlpModel::set_head(const std::string& name, LinearHead head) {
    if (head.weight.rows() != feature_dim() || head.weight.cols() != num_classes_ ||
        head.bias.rows() != 1 || head.bias.cols() != num_classes_) {
        throw ShapeError(fmt::format("head {} has shape {} / {}", name, shape_string(head.weight),
                                     shape_string(head.bias)));
    }
    heads_[name] = std::move(head);
}

ExtractorCache extract(const MlpModel& model, const Matrix& x) {
    if (x.cols() != model.input_dim()) {
        throw ShapeError(fmt::format("input {} for extractor expecting {} columns", shape_string(x),
                                     model.input_dim()));
    }
    ExtractorCache cache;
    cache.activations.reserve(model.layers().size() + 1);
    cache.activations.push_back(x);
    for (const auto& layer : model.layers()) {
        Matrix z = matmul(cache.activations.back(), layer.weight);
        const auto b = layer.bias.row(0);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            auto row = z.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::tanh(row[c] + b[c]);
        }
        cache.activations.push_back(std::move(z));
    }
    return cache;
}

Matrix head_logits(const LinearHead& head, const Matrix& features) {
    Matrix z = matmul(features, head.weight);
    const auto b = head.bias.row(0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
    return z;
}

Prediction predict_from_logits(Matrix logits) {
    Prediction p;
    p.probabilities = softmax_rows(logits);
    p.labels.reserve(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        p.labels.push_back(static_cast<int>(argmax(logits.row(r))));
    }
    p.logits = std::move(logits);
    return p;
}

Prediction mlp_forward(const MlpModel& model, const std::string& head, const Matrix& x) {
    const auto& h = model.head(head);
    return predict_from_logits(head_logits(h, extract(model, x).features()));
}

HeadBackward head_backward(const LinearHead& head, const Matrix& features, const Matrix& d_logits) {
    if (d_logits.rows() != features.rows() || d_logits.cols() != head.weight.cols()) {
        throw ShapeError(fmt::format("upstream {} for features {} and head {}",
                                     shape_string(d_logits), shape_string(features),
                                     shape_string(head.weight)));
    }
    HeadBackward out;
    out.grad.weight = matmul_tn(features, d_logits);
    out.grad.bias = Matrix(1, d_logits.cols());
    for (std::size_t r = 0; r < d_logits.rows(); ++r) {
        const auto row = d_logits.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out.grad.bias(0, c) += row[c];
    }
    out.d_features = matmul_nt(d_logits, head.weight);
    return out;
}

std::vector<DenseLayer> extractor_backward(const MlpModel& model, const ExtractorCache& cache,
                                           const Matrix& d_features) {
    const auto& layers = model.layers();
    if (cache.activations.size() != layers.size() + 1) throw ShapeError("stale extractor cache");
    const Matrix& h = cache.features();
    if (d_features.rows() != h.rows() || d_features.cols() != h.cols()) {
        throw ShapeError(fmt::format("feature gradient {} vs features {}", shape_string(d_features),
                                     shape_string(h)));
    }
    std::vector<DenseLayer> grads(layers.size());
    Matrix upstream = d_features;
    for (std::size_t i = layers.size(); i-- > 0;) {
        // tanh' = 1 - a^2 on the layer output.
        const Matrix& a = cache.activations[i + 1];
        Matrix dz = upstream;
        auto dzd = dz.data();
        const auto ad = a.data();
        for (std::size_t k = 0; k < dzd.size(); ++k) dzd[k] *= 1.0 - ad[k] * ad[k];

        grads[i].weight = matmul_tn(cache.activations[i], dz);
        grads[i].bias = Matrix(1, dz.cols());
        for (std::size_t r = 0; r < dz.rows(); ++r) {
            const auto row = dz.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) grads[i].bias(0, c) += row[c];
        }
        if (i > 0) upstream = matmul_nt(dz, layers[i].weight);
    }
    return grads;
}

ModelGrad backward(const MlpModel& model, const std::string& head, const Matrix& x,
                   const Matrix& upstream) {
    const auto& h = model.head(head);
    const auto cache = extract(model, x);
    auto hb = head_backward(h, cache.features(), upstream);
    return {extractor_backward(model, cache, hb.d_features), std::move(hb.grad)};
}

// --- parameter vectors -------------------------------------------------------------

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
    std::vector<DenseLayer> out;
    out.reserve(layers.size());
    for (const auto& l : layers) {
        out.push_back({Matrix(l.weight.rows(), l.weight.cols()), Matrix(1, l.bias.cols())});
    }
    return out;
}

LinearHead zeros_like(const LinearHead& head) {
    return {Matrix(head.weight.rows(), head.weight.cols()), Matrix(1, head.bias.cols())};
}

void axpy(double scale, const std::vector<DenseLayer>& x, std::vector<DenseLayer>& y) {
    if (x.size() != y.size()) throw ShapeError("axpy: layer count mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i].weight += x[i].weight * scale;
        y[i].bias += x[i].bias * scale;
    }
}

void axpy(double scale, const LinearHead& x, LinearHead& y) {
    y.weight += x.weight * scale;
    y.bias += x.bias * scale;
}

std::size_t parameter_count(const std::vector<DenseLayer>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

namespace {

void append(std::vector<double>& out, const Matrix& m) {
    out.insert(out.end(), m.data().begin(), m.data().end());
}

std::size_t copy_into(const Matrix& flat, std::size_t offset, Matrix& m) {
    if (offset + m.size() > flat.size()) throw ShapeError("unflatten: vector too short");
    std::copy_n(flat.data().begin() + static_cast<std::ptrdiff_t>(offset), m.size(),
                m.data().begin());
    return offset + m.size();
}

}  // namespace

Matrix flatten(const std::vector<DenseLayer>& layers) {
    std::vector<double> out;
    out.reserve(parameter_count(layers));
    for (const auto& l : layers) {
        append(out, l.weight);
        append(out, l.bias);
    }
    const auto n = out.size();
    return Matrix(n, 1, std::move(out));
}

Matrix flatten(const LinearHead& head) {
    std::vector<double> out;
    append(out, head.weight);
    append(out, head.bias);
    const auto n = out.size();
    return Matrix(n, 1, std::move(out));
}

void unflatten(const Matrix& flat, std::vector<DenseLayer>& layers) {
    std::size_t offset = 0;
    for (auto& l : layers) {
        offset = copy_into(flat, offset, l.weight);
        offset = copy_into(flat, offset, l.bias);
    }
    if (offset != flat.size()) throw ShapeError("unflatten: vector too long");
}

void unflatten(const Matrix& flat, LinearHead& head) {
    std::size_t offset = copy_into(flat, 0, head.weight);
    offset = copy_into(flat, offset, head.bias);
    if (offset != flat.size()) throw ShapeError("unflatten: vector too long");
}

// --- snapshots ---------------------------------------------------------------------

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols();
    for (double v : m.data()) out << fmt::format(" {:.17g}", v);
    out << '\n';
}

}  // namespace

void save_model(std::ostream& out, const MlpModel& model) {
    out << "num_classes 1 1 " << model.num_classes() << '\n';
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        write_tensor(out, fmt::format("layer{}.weight", i), model.layers()[i].weight);
        write_tensor(out, fmt::format("layer{}.bias", i), model.layers()[i].bias);
    }
    for (const auto& [name, head] : model.heads()) {
        write_tensor(out, fmt::format("head.{}.weight", name), head.weight);
        write_tensor(out, fmt::format("head.{}.bias", name), head.bias);
    }
}

MlpModel load_model(std::istream& in) {
    std::map<std::string, Matrix> tensors;
    std::vector<std::string> order;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        if (!(ls >> name >> rows >> cols)) throw std::runtime_error("malformed snapshot line");
        std::vector<double> values(rows * cols);
        for (double& v : values) {
            if (!(ls >> v)) throw std::runtime_error("snapshot tensor " + name + " is truncated");
        }
        tensors.emplace(name, Matrix(rows, cols, std::move(values)));
        order.push_back(name);
    }
    auto take = [&](const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("snapshot missing " + name);
        return it->second;
    };
    const auto num_classes = static_cast<std::size_t>(take("num_classes")(0, 0));
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; tensors.contains(fmt::format("layer{}.weight", i)); ++i) {
        layers.push_back({take(fmt::format("layer{}.weight", i)), take(fmt::format("layer{}.bias", i))});
    }
    MlpModel model(std::move(layers), num_classes);
    const std::string prefix = "head.";
    const std::string suffix = ".weight";
    for (const auto& name : order) {
        if (name.starts_with(prefix) && name.ends_with(suffix)) {
            const auto head = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
            model.set_head(head, {take(name), take(prefix + head + ".bias")});
        }
    }
    return model;
}

}  // namespace cst
