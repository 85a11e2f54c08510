#include "cruise/nn.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cruise/errors.hpp"

namespace cruise {

namespace {

constexpr int kCheckpointVersion = 1;
const double kLog2Pi = std::log(2.0 * M_PI);

Eigen::MatrixXd orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
  for (int k = 0; k < small; ++k)
    if (r(k, k) < 0.0) q.col(k) = -q.col(k);
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return gain * w;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw CheckpointError("bad parameter value '" + s + "'");
  return v;
}

}  // namespace

void InputNormalizer::reset(int dim) {
  mean = Eigen::VectorXd::Zero(dim);
  var = Eigen::VectorXd::Ones(dim);
  count = 0.0;
}

void InputNormalizer::update(const Eigen::MatrixXd& batch) {
  const double n = double(batch.cols());
  if (n == 0.0) return;
  const Eigen::VectorXd b_mean = batch.rowwise().mean();
  const Eigen::VectorXd b_var = (batch.colwise() - b_mean).array().square().rowwise().mean();
  if (count == 0.0) {
    mean = b_mean;
    var = b_var;
    count = n;
    return;
  }
  const Eigen::VectorXd delta = b_mean - mean;
  const double total = count + n;
  mean += delta * (n / total);
  var = ((var * count + b_var * n).array() + delta.array().square() * (count * n / total)).matrix() / total;
  count = total;
}

Eigen::MatrixXd InputNormalizer::apply(const Eigen::MatrixXd& obs) const {
  if (count == 0.0) return obs;
  const Eigen::ArrayXd inv_std = (var.array() + kEpsilon).rsqrt();
  return ((obs.colwise() - mean).array().colwise() * inv_std).cwiseMax(-kClip).cwiseMin(kClip).matrix();
}

PolicyParams::PolicyParams(int obs_dim, const std::vector<int>& hidden) { layout(obs_dim, hidden); }

void PolicyParams::layout(int obs_dim, const std::vector<int>& hidden) {
  if (obs_dim < 1) throw ShapeMismatch("observation dimension must be >= 1");
  for (int h : hidden)
    if (h < 1) throw ShapeMismatch("hidden widths must be >= 1");
  actor_layers_.clear();
  critic_layers_.clear();
  actor_offsets_.clear();
  critic_offsets_.clear();
  auto trunk = [&](int out_dim, std::vector<LayerShape>& layers) {
    int in = obs_dim;
    for (int h : hidden) {
      layers.push_back({in, h});
      in = h;
    }
    layers.push_back({in, out_dim});
  };
  trunk(kActionDim, actor_layers_);
  trunk(1, critic_layers_);
  Eigen::Index offset = 0;
  for (const LayerShape& l : actor_layers_) {
    actor_offsets_.push_back(offset);
    offset += Eigen::Index(l.in) * l.out + l.out;
  }
  for (const LayerShape& l : critic_layers_) {
    critic_offsets_.push_back(offset);
    offset += Eigen::Index(l.in) * l.out + l.out;
  }
  flat_ = Eigen::VectorXd::Zero(offset + kActionDim);
  input_.reset(obs_dim);
}

PolicyParams PolicyParams::initialize(int obs_dim, const std::vector<int>& hidden,
                                      std::uint64_t seed) {
  PolicyParams p(obs_dim, hidden);
  p.seed_ = seed;
  std::mt19937_64 rng(seed);
  auto fill = [&](const std::vector<LayerShape>& layers, const std::vector<Eigen::Index>& offsets,
                  double head_gain) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const bool head = l + 1 == layers.size();
      const LayerShape& s = layers[l];
      const Eigen::MatrixXd w = orthogonal(s.out, s.in, head ? head_gain : std::sqrt(2.0), rng);
      Eigen::Map<Eigen::MatrixXd>(p.flat_.data() + offsets[l], s.out, s.in) = w;
    }
  };
  fill(p.actor_layers_, p.actor_offsets_, 0.01);
  fill(p.critic_layers_, p.critic_offsets_, 1.0);
  p.flat_.tail<kActionDim>().setConstant(std::log(0.5));
  return p;
}

std::vector<int> PolicyParams::hidden_sizes() const {
  std::vector<int> h;
  for (std::size_t l = 0; l + 1 < actor_layers_.size(); ++l) h.push_back(actor_layers_[l].out);
  return h;
}

bool PolicyParams::is_actor_parameter(Eigen::Index i) const {
  return i < critic_offsets_.front() || i >= log_std_offset();
}

Eigen::Map<const Eigen::MatrixXd> PolicyParams::weight(bool actor, std::size_t l) const {
  const LayerShape& s = actor ? actor_layers_[l] : critic_layers_[l];
  const Eigen::Index off = actor ? actor_offsets_[l] : critic_offsets_[l];
  return {flat_.data() + off, s.out, s.in};
}

Eigen::Map<const Eigen::VectorXd> PolicyParams::bias(bool actor, std::size_t l) const {
  const LayerShape& s = actor ? actor_layers_[l] : critic_layers_[l];
  const Eigen::Index off = (actor ? actor_offsets_[l] : critic_offsets_[l]) + Eigen::Index(s.in) * s.out;
  return {flat_.data() + off, s.out};
}

bool PolicyParams::bitwise_equal(const PolicyParams& other) const {
  auto same = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
  };
  return same_shape(other) && same(flat_, other.flat_) && same(input_.mean, other.input_.mean) &&
         same(input_.var, other.input_.var) &&
         std::memcmp(&input_.count, &other.input_.count, sizeof(double)) == 0;
}

BatchForward forward_batch(const PolicyParams& params, const Eigen::MatrixXd& obs) {
  if (obs.rows() != params.obs_dim())
    throw ShapeMismatch("observation has dimension " + std::to_string(obs.rows()) +
                        ", network expects " + std::to_string(params.obs_dim()));
  BatchForward out;
  out.input = params.input_normalizer().apply(obs);
  auto run = [&](bool actor, std::vector<Eigen::MatrixXd>& hidden) {
    const std::size_t layers = actor ? params.actor_layers().size() : params.critic_layers().size();
    Eigen::MatrixXd x = out.input;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      Eigen::MatrixXd z = params.weight(actor, l) * x;
      z.colwise() += params.bias(actor, l);
      x = z.array().tanh().matrix();
      hidden.push_back(x);
    }
    Eigen::MatrixXd head = params.weight(actor, layers - 1) * x;
    head.colwise() += params.bias(actor, layers - 1);
    return head;
  };
  out.means = run(true, out.actor_hidden);
  out.values = run(false, out.critic_hidden).row(0);
  return out;
}

ActorCriticOutput forward(const PolicyParams& params, const Eigen::VectorXd& obs) {
  const BatchForward b = forward_batch(params, obs);
  ActorCriticOutput out;
  out.action_mean = b.means.col(0);
  out.action_log_std = params.log_std();
  out.value = b.values(0);
  return out;
}

double gaussian_log_prob(const Eigen::Vector3d& mean, const Eigen::Vector3d& log_std,
                         const Eigen::Vector3d& action) {
  const Eigen::Array3d z = (action - mean).array() / log_std.array().exp();
  return -0.5 * z.square().sum() - log_std.sum() - 0.5 * kActionDim * kLog2Pi;
}

double gaussian_entropy(const Eigen::Vector3d& log_std) {
  return 0.5 * kActionDim * (1.0 + kLog2Pi) + log_std.sum();
}

LogProbEntropy log_prob_and_entropy(const ActorCriticOutput& out, const Eigen::Vector3d& action) {
  return {gaussian_log_prob(out.action_mean, out.action_log_std, action),
          gaussian_entropy(out.action_log_std)};
}

Eigen::VectorXd backward_batch(const PolicyParams& params, const Eigen::MatrixXd& obs,
                               const Eigen::MatrixXd& actions, const BatchForward& cache,
                               const Eigen::RowVectorXd& policy_coef,
                               const Eigen::RowVectorXd& value_coef, double entropy_coef) {
  const Eigen::Index batch = obs.cols();
  if (actions.rows() != kActionDim || actions.cols() != batch || policy_coef.size() != batch ||
      value_coef.size() != batch)
    throw ShapeMismatch("backward_batch: inconsistent batch shapes");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());

  const Eigen::Array3d log_std = params.log_std().array();
  const Eigen::Array3d inv_var = (-2.0 * log_std).exp();
  const Eigen::ArrayXXd diff = (actions - cache.means).array();

  // d logp / d mean = (a - μ) / σ²;  d logp / d log σ = (a - μ)² / σ² - 1.
  const Eigen::MatrixXd d_mean =
      (diff.colwise() * inv_var).rowwise() * policy_coef.array();
  Eigen::Array3d d_log_std =
      ((diff.square().colwise() * inv_var - 1.0).rowwise() * policy_coef.array()).rowwise().sum();
  d_log_std += entropy_coef;
  grad.tail<kActionDim>() = d_log_std.matrix();

  auto trunk = [&](bool actor, const std::vector<Eigen::MatrixXd>& hidden, Eigen::MatrixXd delta) {
    const auto& layers = actor ? params.actor_layers() : params.critic_layers();
    for (std::size_t l = layers.size(); l-- > 0;) {
      const LayerShape& s = layers[l];
      const Eigen::Index off = actor ? params.actor_weight_offset(l) : params.critic_weight_offset(l);
      const Eigen::MatrixXd& input = l == 0 ? cache.input : hidden[l - 1];
      Eigen::Map<Eigen::MatrixXd>(grad.data() + off, s.out, s.in).noalias() = delta * input.transpose();
      Eigen::Map<Eigen::VectorXd>(grad.data() + off + Eigen::Index(s.in) * s.out, s.out) =
          delta.rowwise().sum();
      if (l == 0) break;
      Eigen::MatrixXd back = params.weight(actor, l).transpose() * delta;
      delta = back.array() * (1.0 - hidden[l - 1].array().square());
    }
  };
  trunk(true, cache.actor_hidden, d_mean);
  trunk(false, cache.critic_hidden, Eigen::MatrixXd(value_coef));
  return grad;
}

Eigen::VectorXd backward(const PolicyParams& params, const Eigen::VectorXd& obs,
                         const Eigen::Vector3d& action, const GradCoefficients& coef) {
  const BatchForward cache = forward_batch(params, obs);
  Eigen::RowVectorXd pc(1), vc(1);
  pc(0) = coef.policy;
  vc(0) = coef.value;
  return backward_batch(params, obs, action, cache, pc, vc, coef.entropy);
}

Eigen::Vector3d sample_action(const ActorCriticOutput& out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d a;
  for (int d = 0; d < kActionDim; ++d)
    a(d) = out.action_mean(d) + std::exp(out.action_log_std(d)) * normal(rng);
  return a;
}

std::string checkpoint_to_string(const PolicyParams& params) {
  std::ostringstream out;
  out << "cruise-checkpoint " << kCheckpointVersion << '\n';
  out << "obs_dim " << params.obs_dim() << '\n';
  out << "seed " << params.seed() << '\n';
  out << "hidden";
  for (int h : params.hidden_sizes()) out << ' ' << h;
  out << '\n';
  auto shapes = [&](const char* tag, const std::vector<LayerShape>& layers) {
    out << tag;
    for (const LayerShape& l : layers) out << ' ' << l.in << 'x' << l.out;
    out << '\n';
  };
  shapes("actor", params.actor_layers());
  shapes("critic", params.critic_layers());
  out << "log_std " << kActionDim << '\n';
  out << "count " << params.size() << '\n';
  for (Eigen::Index i = 0; i < params.size(); ++i) out << format_double(params.flat()(i)) << '\n';
  const InputNormalizer& norm = params.input_normalizer();
  out << "input " << norm.mean.size() << ' ' << format_double(norm.count) << '\n';
  for (Eigen::Index i = 0; i < norm.mean.size(); ++i)
    out << format_double(norm.mean(i)) << ' ' << format_double(norm.var(i)) << '\n';
  return out.str();
}

PolicyParams checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "cruise-checkpoint")
    throw CheckpointError("not a checkpoint file");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  int obs_dim = 0;
  std::uint64_t seed = 0;
  if (!(in >> tag >> obs_dim) || tag != "obs_dim") throw CheckpointError("missing obs_dim");
  if (!(in >> tag >> seed) || tag != "seed") throw CheckpointError("missing seed");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::istringstream hidden_line(line);
  hidden_line >> tag;
  if (tag != "hidden") throw CheckpointError("missing hidden sizes");
  std::vector<int> hidden;
  for (int h; hidden_line >> h;) hidden.push_back(h);

  PolicyParams params(obs_dim, hidden);
  auto check_shapes = [&](const char* expected, const std::vector<LayerShape>& layers) {
    std::getline(in, line);
    std::istringstream ls(line);
    ls >> tag;
    if (tag != expected) throw CheckpointError(std::string("missing ") + expected + " shapes");
    for (const LayerShape& l : layers) {
      std::string s;
      ls >> s;
      if (s != std::to_string(l.in) + "x" + std::to_string(l.out))
        throw CheckpointError(std::string("layer shape mismatch in ") + expected);
    }
  };
  check_shapes("actor", params.actor_layers());
  check_shapes("critic", params.critic_layers());
  int log_std_dim = 0;
  Eigen::Index count = 0;
  if (!(in >> tag >> log_std_dim) || tag != "log_std" || log_std_dim != kActionDim)
    throw CheckpointError("bad log_std header");
  if (!(in >> tag >> count) || tag != "count" || count != params.size())
    throw CheckpointError("parameter count does not match layer shapes");
  for (Eigen::Index i = 0; i < count; ++i) {
    std::string v;
    if (!(in >> v)) throw CheckpointError("truncated parameter vector");
    params.flat()(i) = parse_double(v);
  }
  if (!params.flat().allFinite()) throw CheckpointError("non-finite parameter in checkpoint");
  int input_dim = 0;
  std::string count_text;
  if (!(in >> tag >> input_dim >> count_text) || tag != "input" || input_dim != obs_dim)
    throw CheckpointError("bad input normalizer header");
  InputNormalizer& norm = params.input_normalizer();
  norm.count = parse_double(count_text);
  for (int i = 0; i < input_dim; ++i) {
    std::string m, v;
    if (!(in >> m >> v)) throw CheckpointError("truncated input normalizer");
    norm.mean(i) = parse_double(m);
    norm.var(i) = parse_double(v);
  }
  params.set_seed(seed);
  return params;
}

void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(params);
  if (!out) throw CheckpointError("write failed for " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace cruise
