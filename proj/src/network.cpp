#include "diffbridge/network.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "diffbridge/errors.hpp"

namespace diffbridge {

namespace {

constexpr char kMagic[8] = {'D', 'B', 'R', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

Matrix broadcast_cond(const Matrix& y, Eigen::Index n, int cond_dim) {
  if (cond_dim == 0) return Matrix(0, n);
  if (y.rows() != cond_dim) throw DimensionError("conditioning input has the wrong dimension");
  if (y.cols() == n) return y;
  if (y.cols() == 1) return y.replicate(1, n);
  throw DimensionError("conditioning batch size mismatch");
}

}  // namespace

Eigen::RowVectorXd broadcast_time(double t, Eigen::Index n) { return Eigen::RowVectorXd::Constant(n, t); }

Matrix time_features(const Eigen::RowVectorXd& times, int count, double horizon) {
  if (count % 2 != 0) throw DimensionError("time feature count must be even");
  const int half = count / 2;
  Matrix out(count, times.size());
  const Eigen::RowVectorXd tau = times / horizon;
  for (int i = 0; i < half; ++i) {
    const double omega = half > 1 ? std::pow(32.0, static_cast<double>(i) / (half - 1)) : 1.0;
    out.row(2 * i) = (omega * tau).array().sin();
    out.row(2 * i + 1) = (omega * tau).array().cos();
  }
  return out;
}

Mlp::Mlp(MlpArchitecture arch, Rng& init_rng) : arch_(std::move(arch)) {
  if (arch_.time_features % 2 != 0) throw DimensionError("time feature count must be even");
  std::vector<int> widths{arch_.input_dim()};
  widths.insert(widths.end(), arch_.hidden.begin(), arch_.hidden.end());
  widths.push_back(arch_.output_dim);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer{offset, offset + static_cast<Eigen::Index>(widths[l + 1]) * widths[l], widths[l + 1], widths[l]};
    offset = layer.b_offset + widths[l + 1];
    layers_.push_back(layer);
  }
  params_ = Vector::Zero(offset);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const double bound = std::sqrt(6.0 / (layer.rows + layer.cols));
    const double s = l + 1 == layers_.size() ? arch_.final_layer_scale : 1.0;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(layer.rows) * layer.cols; ++i)
      params_(layer.w_offset + i) = s * init_rng.uniform(-bound, bound);
  }
}

Mlp::Mlp(MlpArchitecture arch, Vector params) : Mlp([&] {
  Rng unused(0);
  return Mlp(arch, unused);
}()) {
  if (params.size() != params_.size()) throw DimensionError("parameter vector does not match architecture");
  params_ = std::move(params);
}

void Mlp::zero() { params_.setZero(); }

Matrix Mlp::assemble_input(const Eigen::RowVectorXd& times, const Matrix& x, const Matrix& y) const {
  if (x.rows() != arch_.state_dim) throw DimensionError("state input has the wrong dimension");
  if (times.size() != x.cols()) throw DimensionError("one time per batch column required");
  Matrix in(arch_.input_dim(), x.cols());
  in.topRows(arch_.time_features) = time_features(times, arch_.time_features, arch_.horizon);
  in.middleRows(arch_.time_features, arch_.state_dim) = x;
  if (arch_.cond_dim > 0) in.bottomRows(arch_.cond_dim) = broadcast_cond(y, x.cols(), arch_.cond_dim);
  return in;
}

Matrix Mlp::evaluate(const Eigen::RowVectorXd& times, const Matrix& x, const Matrix& y) const {
  Matrix h = assemble_input(times, x, y);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Eigen::Map<const Matrix> W(params_.data() + layer.w_offset, layer.rows, layer.cols);
    Eigen::Map<const Vector> b(params_.data() + layer.b_offset, layer.rows);
    Matrix z = W * h;
    z.colwise() += b;
    if (l + 1 < layers_.size()) {
      h = (z.array() / (1.0 + (-z.array()).exp())).matrix();
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Matrix Mlp::evaluate(double t, const Matrix& x, const Matrix& y) const {
  return evaluate(broadcast_time(t, x.cols()), x, y);
}

Vector Mlp::evaluate(double t, const Vector& x, const Vector& y) const {
  return evaluate(t, Matrix(x), Matrix(y)).col(0);
}

ad::Var Mlp::record(ad::Tape& tape, const Eigen::RowVectorXd& times, ad::Var x, const Matrix& y,
                    double* grad_sink) const {
  if (x.rows() != arch_.state_dim) throw DimensionError("state input has the wrong dimension");
  std::vector<ad::Var> parts{tape.constant(time_features(times, arch_.time_features, arch_.horizon)), x};
  if (arch_.cond_dim > 0) parts.push_back(tape.constant(broadcast_cond(y, x.cols(), arch_.cond_dim)));
  ad::Var h = ad::concat_rows(parts);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    ad::Var W = tape.parameter(params_.data() + layer.w_offset, layer.rows, layer.cols,
                               grad_sink ? grad_sink + layer.w_offset : nullptr);
    ad::Var b = tape.parameter(params_.data() + layer.b_offset, layer.rows, 1,
                               grad_sink ? grad_sink + layer.b_offset : nullptr);
    h = ad::add(ad::matmul(W, h), b);
    if (l + 1 < layers_.size()) h = ad::silu(h);
  }
  return h;
}

void save_checkpoint(const Mlp& net, const std::filesystem::path& path, const std::string& role) {
  const auto& a = net.architecture();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  auto put = [&out](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write(kMagic, sizeof(kMagic));
  put(kFormatVersion);
  put(static_cast<std::int32_t>(a.state_dim));
  put(static_cast<std::int32_t>(a.cond_dim));
  put(static_cast<std::int32_t>(a.output_dim));
  put(static_cast<std::int32_t>(a.time_features));
  put(static_cast<std::int32_t>(a.hidden.size()));
  for (int h : a.hidden) put(static_cast<std::int32_t>(h));
  put(a.horizon);
  put(a.final_layer_scale);
  put(static_cast<std::uint64_t>(net.num_params()));
  out.write(reinterpret_cast<const char*>(net.params().data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(net.num_params())));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());

  std::ofstream manifest(path.string() + ".manifest", std::ios::trunc);
  manifest << "format = diffbridge-mlp\n"
           << "version = " << kFormatVersion << "\n"
           << "role = " << role << "\n"
           << "state_dim = " << a.state_dim << "\n"
           << "cond_dim = " << a.cond_dim << "\n"
           << "output_dim = " << a.output_dim << "\n"
           << "time_features = " << a.time_features << "\n"
           << "hidden =";
  for (int h : a.hidden) manifest << ' ' << h;
  manifest << "\nhorizon = " << a.horizon << "\n"
           << "num_params = " << net.num_params() << "\n";
}

Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a diffbridge checkpoint: " + path.string());
  auto get = [&in]<typename T>(T& v) { in.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  std::uint32_t version = 0;
  get(version);
  if (version != kFormatVersion) throw std::runtime_error("unsupported checkpoint version");
  std::int32_t sd, cd, od, tf, nh;
  get(sd);
  get(cd);
  get(od);
  get(tf);
  get(nh);
  MlpArchitecture a;
  a.state_dim = sd;
  a.cond_dim = cd;
  a.output_dim = od;
  a.time_features = tf;
  a.hidden.resize(static_cast<std::size_t>(nh));
  for (auto& h : a.hidden) {
    std::int32_t w;
    get(w);
    h = w;
  }
  get(a.horizon);
  get(a.final_layer_scale);
  std::uint64_t n = 0;
  get(n);
  Vector params(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(sizeof(double) * n));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return Mlp(a, std::move(params));
}

}  // namespace diffbridge
