#include "simcvd/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "simcvd/rng.hpp"

namespace simcvd {

using MapC = Eigen::Map<const Matrix>;
using MapM = Eigen::Map<Matrix>;

void to_json(nlohmann::json& j, const ArchDescriptor& a) {
    j = nlohmann::json{{"base_width", a.base_width}, {"levels", a.levels}, {"leak", a.leak},
                       {"pool_size", a.pool_size}, {"mlp_hidden", a.mlp_hidden}, {"d_h", a.d_h}};
}

void from_json(const nlohmann::json& j, ArchDescriptor& a) {
    const ArchDescriptor d;
    a.base_width = j.value("base_width", d.base_width);
    a.levels = j.value("levels", d.levels);
    a.leak = j.value("leak", d.leak);
    a.pool_size = j.value("pool_size", d.pool_size);
    a.mlp_hidden = j.value("mlp_hidden", d.mlp_hidden);
    a.d_h = j.value("d_h", d.d_h);
}

namespace {

constexpr int kTaps = 27;

int channels(const ArchDescriptor& a, int level) { return a.base_width << level; }

void add_tensor(std::vector<Tensor>& out, std::string name, int rows, int cols) {
    out.push_back(Tensor{std::move(name), {rows, cols}, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0)});
}

// Parameter layout, in the order the forward pass consumes it.
std::vector<Tensor> layout(const ArchDescriptor& a) {
    if (a.base_width < 1 || a.levels < 1 || a.pool_size < 1 || a.d_h < 1 || a.mlp_hidden.size() != 2) {
        throw InvalidArgument("invalid architecture descriptor");
    }
    std::vector<Tensor> t;
    add_tensor(t, "enc0.w", kTaps, channels(a, 0));
    add_tensor(t, "enc0.b", 1, channels(a, 0));
    for (int l = 1; l <= a.levels; ++l) {
        const std::string dn = "down" + std::to_string(l);
        const std::string en = "enc" + std::to_string(l);
        add_tensor(t, dn + ".w", 8 * channels(a, l - 1), channels(a, l));
        add_tensor(t, dn + ".b", 1, channels(a, l));
        add_tensor(t, en + ".w", kTaps * channels(a, l), channels(a, l));
        add_tensor(t, en + ".b", 1, channels(a, l));
    }
    for (int l = a.levels; l >= 1; --l) {
        const std::string up = "up" + std::to_string(l);
        const std::string de = "dec" + std::to_string(l - 1);
        add_tensor(t, up + ".w", channels(a, l), 8 * channels(a, l - 1));
        add_tensor(t, up + ".b", 1, channels(a, l - 1));
        add_tensor(t, de + ".w", kTaps * channels(a, l - 1), channels(a, l - 1));
        add_tensor(t, de + ".b", 1, channels(a, l - 1));
    }
    add_tensor(t, "head_prob.w", channels(a, 0), 1);
    add_tensor(t, "head_prob.b", 1, 1);
    add_tensor(t, "head_sdm.w", channels(a, 0), 1);
    add_tensor(t, "head_sdm.b", 1, 1);
    const int widths[] = {a.pool_size * a.pool_size, a.mlp_hidden[0], a.mlp_hidden[1], a.d_h};
    for (int k = 0; k < 3; ++k) {
        add_tensor(t, "proj.fc" + std::to_string(k + 1) + ".w", widths[k], widths[k + 1]);
        add_tensor(t, "proj.fc" + std::to_string(k + 1) + ".b", 1, widths[k + 1]);
    }
    return t;
}

MapC mat(const ParamSet& p, const std::string& name) {
    const Tensor& t = p.at(name);
    return MapC(t.values.data(), t.shape[0], t.shape[1]);
}
MapM mat(ParamSet& p, const std::string& name) {
    Tensor& t = p.at(name);
    return MapM(t.values.data(), t.shape[0], t.shape[1]);
}

// ---- spatial helpers: activations are (voxels x channels), z fastest ----

Matrix im2col3(const Matrix& x, const Shape3& s) {
    const auto c = static_cast<int>(x.cols());
    Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(s.voxels()), kTaps * c);
    int o = 0;
    for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dz = -1; dz <= 1; ++dz, ++o) {
                const int z0 = std::max(0, -dz);
                const int z1 = std::min(s.nz, s.nz - dz);
                for (int ch = 0; ch < c; ++ch) {
                    double* dst = cols.col(o * c + ch).data();
                    const double* src = x.col(ch).data();
                    for (int xi = std::max(0, -dx); xi < std::min(s.nx, s.nx - dx); ++xi)
                        for (int yi = std::max(0, -dy); yi < std::min(s.ny, s.ny - dy); ++yi) {
                            double* d = dst + s.index(xi, yi, 0);
                            const double* r = src + s.index(xi + dx, yi + dy, 0) + dz;
                            for (int z = z0; z < z1; ++z) d[z] = r[z];
                        }
                }
            }
    return cols;
}

Matrix col2im3(const Matrix& dcols, const Shape3& s, int c) {
    Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(s.voxels()), c);
    int o = 0;
    for (int ox = -1; ox <= 1; ++ox)
        for (int oy = -1; oy <= 1; ++oy)
            for (int oz = -1; oz <= 1; ++oz, ++o) {
                const int z0 = std::max(0, -oz);
                const int z1 = std::min(s.nz, s.nz - oz);
                for (int ch = 0; ch < c; ++ch) {
                    const double* src = dcols.col(o * c + ch).data();
                    double* dst = dx.col(ch).data();
                    for (int xi = std::max(0, -ox); xi < std::min(s.nx, s.nx - ox); ++xi)
                        for (int yi = std::max(0, -oy); yi < std::min(s.ny, s.ny - oy); ++yi) {
                            const double* r = src + s.index(xi, yi, 0);
                            double* d = dst + s.index(xi + ox, yi + oy, 0) + oz;
                            for (int z = z0; z < z1; ++z) d[z] += r[z];
                        }
                }
            }
    return dx;
}

Shape3 half(const Shape3& s) { return Shape3{s.nx / 2, s.ny / 2, s.nz / 2}; }

// (N x C) at shape s -> (N/8 x 8C) with column (o*C + ch), o = 4a + 2b + c the 2x2x2 offset.
Matrix gather2(const Matrix& x, const Shape3& s) {
    const auto c = static_cast<int>(x.cols());
    const Shape3 h = half(s);
    Matrix out(static_cast<Eigen::Index>(h.voxels()), 8 * c);
    for (int o = 0; o < 8; ++o) {
        const int a = o >> 2, b = (o >> 1) & 1, cc = o & 1;
        for (int ch = 0; ch < c; ++ch) {
            double* dst = out.col(o * c + ch).data();
            const double* src = x.col(ch).data();
            for (int i = 0; i < h.nx; ++i)
                for (int j = 0; j < h.ny; ++j)
                    for (int k = 0; k < h.nz; ++k) dst[h.index(i, j, k)] = src[s.index(2 * i + a, 2 * j + b, 2 * k + cc)];
        }
    }
    return out;
}

// Inverse permutation of gather2: (N/8 x 8C) -> (N x C) at shape s.
Matrix scatter2(const Matrix& y, const Shape3& s, int c) {
    const Shape3 h = half(s);
    Matrix out(static_cast<Eigen::Index>(s.voxels()), c);
    for (int o = 0; o < 8; ++o) {
        const int a = o >> 2, b = (o >> 1) & 1, cc = o & 1;
        for (int ch = 0; ch < c; ++ch) {
            const double* src = y.col(o * c + ch).data();
            double* dst = out.col(ch).data();
            for (int i = 0; i < h.nx; ++i)
                for (int j = 0; j < h.ny; ++j)
                    for (int k = 0; k < h.nz; ++k) dst[s.index(2 * i + a, 2 * j + b, 2 * k + cc)] = src[h.index(i, j, k)];
        }
    }
    return out;
}

void leaky_inplace(Matrix& z, double leak) {
    z = z.unaryExpr([leak](double v) { return v > 0.0 ? v : leak * v; });
}

// Multiplies the upstream gradient by the leaky-ReLU derivative read off the activation output.
Matrix leaky_grad(const Matrix& upstream, const Matrix& out, double leak) {
    return upstream.binaryExpr(out, [leak](double g, double o) { return o > 0.0 ? g : leak * g; });
}

Matrix affine(const Matrix& in, const MapC& w, const MapC& b) {
    Matrix z(in.rows(), w.cols());
    z.noalias() = in * w;
    z.rowwise() += b.row(0);
    return z;
}

void accumulate(ParamSet& grads, const std::string& name, const Matrix& input, const Matrix& dz) {
    mat(grads, name + ".w").noalias() += input.transpose() * dz;
    mat(grads, name + ".b") += dz.colwise().sum();
}

struct TapeIndex {
    int levels;
    [[nodiscard]] int enc0() const { return 0; }
    [[nodiscard]] int down(int l) const { return 2 * l - 1; }
    [[nodiscard]] int enc(int l) const { return 2 * l; }
    [[nodiscard]] int up(int l) const { return 2 * levels + 1 + 2 * (levels - l); }
    [[nodiscard]] int dec(int l) const { return up(l) + 1; }  // decoder conv following up(l)
    [[nodiscard]] int count() const { return 4 * levels + 1; }
};

}  // namespace

// ---------------------------------------------------------------------------------------------

ParamSet::ParamSet(ArchDescriptor arch) : arch_(std::move(arch)), tensors_(layout(arch_)) {}

const Tensor& ParamSet::at(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw InvalidArgument("no parameter tensor named " + name);
}

Tensor& ParamSet::at(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).at(name));
}

std::size_t ParamSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.values.size();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet z = *this;
    for (auto& t : z.tensors_) std::fill(t.values.begin(), t.values.end(), 0.0);
    return z;
}

std::uint64_t ParamSet::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tensors_) {
        for (double v : t.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int k = 0; k < 8; ++k) {
                h ^= (bits >> (8 * k)) & 0xffU;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

bool ParamSet::all_finite() const {
    for (const auto& t : tensors_)
        for (double v : t.values)
            if (!std::isfinite(v)) return false;
    return true;
}

ParamSet init_params(const ArchDescriptor& arch, std::uint64_t seed) {
    ParamSet p(arch);
    std::uint64_t k = 0;
    for (auto& t : p.tensors()) {
        ++k;
        if (t.name.ends_with(".b")) continue;
        Rng rng(derive_seed(seed, {k}));
        double gain = 2.0;
        if (t.name.starts_with("head_")) {
            gain = 0.01;
        } else if (t.name.starts_with("dec") || t.name.starts_with("up") ||
                   (t.name.starts_with("enc") && !t.name.starts_with("enc0"))) {
            gain = 1.0;
        }
        const double sd = std::sqrt(gain / t.shape[0]);
        for (double& v : t.values) v = sd * standard_normal(rng);
    }
    return p;
}

void require_compatible(const ParamSet& a, const ParamSet& b, const std::string& what) {
    const std::size_t n = std::min(a.tensors().size(), b.tensors().size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& x = a.tensors()[i];
        const auto& y = b.tensors()[i];
        if (x.name != y.name || x.shape != y.shape || x.values.size() != y.values.size()) {
            throw StateError(what + ": tensor mismatch at " + x.name);
        }
    }
    if (a.tensors().size() != b.tensors().size()) throw StateError(what + ": tensor counts differ");
    if (!(a.arch() == b.arch())) throw StateError(what + ": architecture descriptors differ");
}

void ema_update_inplace(ParamSet& teacher, const ParamSet& student, double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidArgument("ema_update: decay must lie in [0,1]");
    require_compatible(teacher, student, "ema_update");
    const double keep = 1.0 - decay;
    for (std::size_t i = 0; i < teacher.tensors().size(); ++i) {
        auto& t = teacher.tensors()[i].values;
        const auto& s = student.tensors()[i].values;
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = decay * t[k] + keep * s[k];
    }
}

ParamSet ema_update(const ParamSet& teacher, const ParamSet& student, double decay) {
    ParamSet out = teacher;
    ema_update_inplace(out, student, decay);
    return out;
}

// ---------------------------------------------------------------------------------------------

ForwardResult forward(const ParamSet& params, const Volume& x, ForwardTape* tape) {
    return forward(params, x.voxels, tape);
}

ForwardResult forward(const ParamSet& params, const RealGrid& x, ForwardTape* tape) {
    const ArchDescriptor& a = params.arch();
    const Shape3 s0 = x.shape();
    const int f = a.downsampling();
    for (int ax = 0; ax < 3; ++ax) {
        if (s0[ax] < f || s0[ax] % f != 0) {
            throw ShapeError("forward: input shape " + s0.str() + " must be divisible by " + std::to_string(f) +
                             " along every axis");
        }
    }
    ForwardTape local;
    ForwardTape& tp = tape != nullptr ? *tape : local;
    const TapeIndex ix{a.levels};
    tp.input_shape = s0;
    tp.layers.assign(static_cast<std::size_t>(ix.count()), {});

    std::vector<Shape3> shapes{s0};
    for (int l = 1; l <= a.levels; ++l) shapes.push_back(half(shapes.back()));

    const MapC xin(x.data(), static_cast<Eigen::Index>(x.size()), 1);
    std::vector<Matrix> skip(static_cast<std::size_t>(a.levels + 1));

    {
        auto& L = tp.layers[ix.enc0()];
        L.shape = s0;
        L.input = im2col3(Matrix(xin), s0);
        L.output = affine(L.input, mat(params, "enc0.w"), mat(params, "enc0.b"));
        leaky_inplace(L.output, a.leak);
        skip[0] = L.output;
    }
    for (int l = 1; l <= a.levels; ++l) {
        const std::string ls = std::to_string(l);
        auto& D = tp.layers[ix.down(l)];
        D.shape = shapes[l - 1];
        D.input = gather2(skip[l - 1], shapes[l - 1]);
        D.output = affine(D.input, mat(params, "down" + ls + ".w"), mat(params, "down" + ls + ".b"));
        leaky_inplace(D.output, a.leak);
        auto& E = tp.layers[ix.enc(l)];
        E.shape = shapes[l];
        E.input = im2col3(D.output, shapes[l]);
        E.output = affine(E.input, mat(params, "enc" + ls + ".w"), mat(params, "enc" + ls + ".b"));
        leaky_inplace(E.output, a.leak);
        skip[l] = E.output + D.output;
    }

    ForwardResult res;
    res.hidden = skip[a.levels];
    Matrix h = skip[a.levels];
    for (int l = a.levels; l >= 1; --l) {
        const std::string ls = std::to_string(l);
        const std::string ds = std::to_string(l - 1);
        const int c_out = channels(a, l - 1);
        auto& U = tp.layers[ix.up(l)];
        U.shape = shapes[l];
        U.input = std::move(h);
        Matrix y(U.input.rows(), 8 * c_out);
        y.noalias() = U.input * mat(params, "up" + ls + ".w");
        U.output = scatter2(y, shapes[l - 1], c_out);
        U.output.rowwise() += mat(params, "up" + ls + ".b").row(0);
        leaky_inplace(U.output, a.leak);
        const Matrix sum = U.output + skip[l - 1];
        auto& E = tp.layers[ix.dec(l)];
        E.shape = shapes[l - 1];
        E.input = im2col3(sum, shapes[l - 1]);
        E.output = affine(E.input, mat(params, "dec" + ds + ".w"), mat(params, "dec" + ds + ".b"));
        leaky_inplace(E.output, a.leak);
        h = E.output + sum;
    }
    tp.final_features = h;

    const Matrix zp = affine(h, mat(params, "head_prob.w"), mat(params, "head_prob.b"));
    const Matrix zs = affine(h, mat(params, "head_sdm.w"), mat(params, "head_sdm.b"));
    res.out.prob = RealGrid(s0);
    res.out.sdm = RealGrid(s0);
    for (std::size_t i = 0; i < s0.voxels(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        res.out.prob[i] = 1.0 / (1.0 + std::exp(-zp(r, 0)));
        res.out.sdm[i] = std::tanh(zs(r, 0));
    }
    return res;
}

void backward(const ParamSet& params, const ForwardTape& tape, const ForwardResult& result, const RealGrid& d_prob,
              const RealGrid& d_sdm, const Matrix& d_hidden, ParamSet& grads) {
    const ArchDescriptor& a = params.arch();
    const TapeIndex ix{a.levels};
    if (tape.layers.size() != static_cast<std::size_t>(ix.count())) throw StateError("backward: tape does not match");
    const Shape3 s0 = tape.input_shape;
    const auto n0 = static_cast<Eigen::Index>(s0.voxels());

    Matrix dzp = Matrix::Zero(n0, 1);
    Matrix dzs = Matrix::Zero(n0, 1);
    if (!d_prob.empty()) {
        require_same_shape(d_prob.shape(), s0, "backward d_prob");
        for (Eigen::Index i = 0; i < n0; ++i) {
            const double p = result.out.prob[static_cast<std::size_t>(i)];
            dzp(i, 0) = d_prob[static_cast<std::size_t>(i)] * p * (1.0 - p);
        }
    }
    if (!d_sdm.empty()) {
        require_same_shape(d_sdm.shape(), s0, "backward d_sdm");
        for (Eigen::Index i = 0; i < n0; ++i) {
            const double q = result.out.sdm[static_cast<std::size_t>(i)];
            dzs(i, 0) = d_sdm[static_cast<std::size_t>(i)] * (1.0 - q * q);
        }
    }
    accumulate(grads, "head_prob", tape.final_features, dzp);
    accumulate(grads, "head_sdm", tape.final_features, dzs);
    Matrix dh = dzp * mat(params, "head_prob.w").transpose() + dzs * mat(params, "head_sdm.w").transpose();

    std::vector<Matrix> dskip(static_cast<std::size_t>(a.levels + 1));
    for (int l = 1; l <= a.levels; ++l) {
        const std::string ls = std::to_string(l);
        const std::string ds = std::to_string(l - 1);
        const int c_out = channels(a, l - 1);
        const auto& E = tape.layers[ix.dec(l)];
        // h = act(conv(sum)) + sum
        const Matrix dz = leaky_grad(dh, E.output, a.leak);
        accumulate(grads, "dec" + ds, E.input, dz);
        Matrix dsum = dh + col2im3(dz * mat(params, "dec" + ds + ".w").transpose(), E.shape, c_out);
        dskip[l - 1] = dsum;  // sum = u + skip
        const auto& U = tape.layers[ix.up(l)];
        const Matrix du = leaky_grad(dsum, U.output, a.leak);
        mat(grads, "up" + ls + ".b") += du.colwise().sum();
        const Matrix dy = gather2(du, E.shape);
        mat(grads, "up" + ls + ".w").noalias() += U.input.transpose() * dy;
        dh = dy * mat(params, "up" + ls + ".w").transpose();
    }

    Matrix da = dh;
    if (d_hidden.size() > 0) {
        if (d_hidden.rows() != da.rows() || d_hidden.cols() != da.cols()) throw ShapeError("backward: d_hidden shape");
        da += d_hidden;
    }
    for (int l = a.levels; l >= 1; --l) {
        const std::string ls = std::to_string(l);
        const int c = channels(a, l);
        const auto& E = tape.layers[ix.enc(l)];
        const auto& D = tape.layers[ix.down(l)];
        // skip[l] = act(conv(d)) + d
        const Matrix dz = leaky_grad(da, E.output, a.leak);
        accumulate(grads, "enc" + ls, E.input, dz);
        const Matrix dd = da + col2im3(dz * mat(params, "enc" + ls + ".w").transpose(), E.shape, c);
        const Matrix dzd = leaky_grad(dd, D.output, a.leak);
        accumulate(grads, "down" + ls, D.input, dzd);
        da = dskip[l - 1] + scatter2(dzd * mat(params, "down" + ls + ".w").transpose(), D.shape, channels(a, l - 1));
    }
    const auto& E0 = tape.layers[ix.enc0()];
    accumulate(grads, "enc0", E0.input, leaky_grad(da, E0.output, a.leak));
}

// ---------------------------------------------------------------------------------------------

AlphaDropoutCoeffs alpha_dropout_coeffs(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("alpha dropout rate must lie in [0,1)");
    // Saturation value of SELU: -scale * alpha.
    constexpr double kAlphaPrime = -1.0507009873554804934193349852946 * 1.6732632423543772848170429916717;
    AlphaDropoutCoeffs c;
    c.alpha_prime = kAlphaPrime;
    c.a = 1.0 / std::sqrt((1.0 - p) * (1.0 + p * kAlphaPrime * kAlphaPrime));
    c.b = -c.a * kAlphaPrime * p;
    return c;
}

std::vector<std::uint8_t> dropout_keep(const DropoutMask& mask, std::size_t n) {
    std::vector<std::uint8_t> keep(n, 1);
    if (mask.p == 0.0) return keep;
    Rng rng(mask.seed);
    for (auto& k : keep) k = uniform01(rng) >= mask.p ? 1 : 0;
    return keep;
}

RealGrid alpha_dropout(const RealGrid& x, const DropoutMask& mask) {
    const auto c = alpha_dropout_coeffs(mask.p);
    if (mask.p == 0.0) return x;
    const auto keep = dropout_keep(mask, x.size());
    RealGrid y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = c.a * (keep[i] ? x[i] : c.alpha_prime) + c.b;
    return y;
}

Matrix adaptive_pool_matrix(int in, int out) {
    if (in < 1 || out < 1) throw InvalidArgument("adaptive_pool_matrix: sizes must be positive");
    Matrix m = Matrix::Zero(out, in);
    for (int i = 0; i < out; ++i) {
        const int start = static_cast<int>((static_cast<long>(i) * in) / out);
        const int end = static_cast<int>((static_cast<long>(i + 1) * in + out - 1) / out);
        for (int k = start; k < end; ++k) m(i, k) = 1.0 / (end - start);
    }
    return m;
}

SliceEmbeddingMatrix project(const RealGrid& q_ba, const DropoutMask& mask, const ParamSet& params,
                             ProjectionTape* tape) {
    if (q_ba.empty()) throw ShapeError("project: empty feature");
    const ArchDescriptor& a = params.arch();
    const Shape3 s = q_ba.shape();
    const int ps = a.pool_size;
    const auto c = alpha_dropout_coeffs(mask.p);
    const auto keep = dropout_keep(mask, q_ba.size());

    ProjectionTape local;
    ProjectionTape& tp = tape != nullptr ? *tape : local;
    tp.shape = s;
    tp.scale.resize(q_ba.size());
    const Matrix ax = adaptive_pool_matrix(s.nx, ps);
    const Matrix ay = adaptive_pool_matrix(s.ny, ps);
    tp.pooled.resize(s.nz, static_cast<Eigen::Index>(ps) * ps);
    Matrix slice(s.nx, s.ny);
    for (int z = 0; z < s.nz; ++z) {
        for (int x = 0; x < s.nx; ++x)
            for (int y = 0; y < s.ny; ++y) {
                const std::size_t i = s.index(x, y, z);
                slice(x, y) = c.a * (keep[i] ? q_ba[i] : c.alpha_prime) + c.b;
                tp.scale[i] = keep[i] ? c.a : 0.0;
            }
        const Matrix pooled = ax * slice * ay.transpose();
        // row-major flatten of the pooled slice
        for (int i = 0; i < ps; ++i) tp.pooled.block(z, static_cast<Eigen::Index>(i) * ps, 1, ps) = pooled.row(i);
    }
    tp.hidden.clear();
    Matrix h = tp.pooled;
    for (int k = 1; k <= 3; ++k) {
        const std::string n = "proj.fc" + std::to_string(k);
        h = affine(h, mat(params, n + ".w"), mat(params, n + ".b"));
        if (k < 3) {
            leaky_inplace(h, a.leak);
            tp.hidden.push_back(h);
        }
    }
    return h;
}

RealGrid project_backward(const ParamSet& params, const ProjectionTape& tape, const Matrix& d_embedding,
                          ParamSet& grads) {
    const ArchDescriptor& a = params.arch();
    const Shape3 s = tape.shape;
    const int ps = a.pool_size;
    if (d_embedding.rows() != s.nz || d_embedding.cols() != a.d_h) throw ShapeError("project_backward: gradient shape");
    Matrix dz = d_embedding;
    for (int k = 3; k >= 1; --k) {
        const std::string n = "proj.fc" + std::to_string(k);
        const Matrix& input = k == 1 ? tape.pooled : tape.hidden[static_cast<std::size_t>(k - 2)];
        accumulate(grads, n, input, dz);
        Matrix dx = dz * mat(params, n + ".w").transpose();
        dz = k > 1 ? leaky_grad(dx, input, a.leak) : std::move(dx);
    }
    const Matrix ax = adaptive_pool_matrix(s.nx, ps);
    const Matrix ay = adaptive_pool_matrix(s.ny, ps);
    RealGrid dq(s);
    Matrix dpooled(ps, ps);
    for (int z = 0; z < s.nz; ++z) {
        for (int i = 0; i < ps; ++i) dpooled.row(i) = dz.block(z, static_cast<Eigen::Index>(i) * ps, 1, ps);
        const Matrix dslice = ax.transpose() * dpooled * ay;
        for (int x = 0; x < s.nx; ++x)
            for (int y = 0; y < s.ny; ++y) {
                const std::size_t i = s.index(x, y, z);
                dq[i] = tape.scale[i] * dslice(x, y);
            }
    }
    return dq;
}

}  // namespace simcvd
