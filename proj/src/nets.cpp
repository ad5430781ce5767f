#include "objnav/nets.hpp"

#include <cmath>

#include "objnav/error.hpp"

namespace objnav {

int NetConfig::conv_output_len() const {
  int len = lidar_rays;
  for (size_t i = 0; i < conv_channels.size(); ++i) len = (len - conv_kernel) / conv_stride + 1;
  if (len < 1) throw ShapeError("net config: lidar conv stack collapses to length " + std::to_string(len));
  return len * conv_channels.back();
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = nlohmann::json{{"embed_dim", c.embed_dim},         {"lstm_dim", c.lstm_dim},
                     {"head_hidden", c.head_hidden},     {"lidar_rays", c.lidar_rays},
                     {"lidar_max_range", c.lidar_max_range}, {"det_bins", c.det_bins},
                     {"conv_channels", c.conv_channels}, {"conv_kernel", c.conv_kernel},
                     {"conv_stride", c.conv_stride},     {"action_dim", c.action_dim}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  NetConfig d;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.lstm_dim = j.value("lstm_dim", d.lstm_dim);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.lidar_rays = j.value("lidar_rays", d.lidar_rays);
  c.lidar_max_range = j.value("lidar_max_range", d.lidar_max_range);
  c.det_bins = j.value("det_bins", d.det_bins);
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.conv_kernel = j.value("conv_kernel", d.conv_kernel);
  c.conv_stride = j.value("conv_stride", d.conv_stride);
  c.action_dim = j.value("action_dim", d.action_dim);
  if (c.embed_dim <= 0 || c.lstm_dim <= 0 || c.head_hidden <= 0 || c.action_dim <= 0 ||
      c.conv_channels.empty() || c.conv_kernel <= 0 || c.conv_stride <= 0) {
    throw ParseError("net config: all dimensions must be positive");
  }
}

// ---------------------------------------------------------------------------
// Observation batches

namespace {

template <class T>
ad::Tensor<T> rows_of(const ad::Tensor<T>& t, int begin, int end) {
  const size_t row = t.size() / static_cast<size_t>(t.dim(0));
  ad::Shape s = t.shape();
  s[0] = end - begin;
  std::vector<T> data(t.storage().begin() + static_cast<ptrdiff_t>(row * begin),
                      t.storage().begin() + static_cast<ptrdiff_t>(row * end));
  return ad::Tensor<T>(std::move(s), std::move(data));
}

}  // namespace

template <class T>
ObsBatch<T> ObsBatch<T>::slice_rows(int begin, int end) const {
  if (begin < 0 || end > rows || begin > end) {
    throw ShapeError("obs batch: row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of " + std::to_string(rows));
  }
  return {end - begin, rows_of(lidar, begin, end), rows_of(det, begin, end), rows_of(goal, begin, end),
          rows_of(prev_action, begin, end), rows_of(collision, begin, end)};
}

template <class T>
ObsBatch<T> make_obs_batch(std::span<const Observation* const> obs, const NetConfig& cfg) {
  const int n = static_cast<int>(obs.size());
  ObsBatch<T> b;
  b.rows = n;
  b.lidar = ad::Tensor<T>({n, cfg.lidar_rays, 1});
  b.det = ad::Tensor<T>({n, cfg.det_bins});
  b.goal = ad::Tensor<T>({n, kNumLabels});
  b.prev_action = ad::Tensor<T>({n, 2});
  b.collision = ad::Tensor<T>({n, 1});
  const T inv_range = static_cast<T>(1.0 / cfg.lidar_max_range);
  for (int r = 0; r < n; ++r) {
    const Observation& o = *obs[static_cast<size_t>(r)];
    if (static_cast<int>(o.lidar.size()) != cfg.lidar_rays || static_cast<int>(o.det.size()) != cfg.det_bins) {
      throw ShapeError("make_obs_batch: observation has " + std::to_string(o.lidar.size()) + " rays / " +
                       std::to_string(o.det.size()) + " det bins");
    }
    for (int k = 0; k < cfg.lidar_rays; ++k) {
      b.lidar[static_cast<size_t>(r * cfg.lidar_rays + k)] = static_cast<T>(o.lidar[static_cast<size_t>(k)]) * inv_range;
    }
    for (int k = 0; k < cfg.det_bins; ++k) {
      b.det[static_cast<size_t>(r * cfg.det_bins + k)] = o.det[static_cast<size_t>(k)] ? T(1) : T(0);
    }
    for (int k = 0; k < kNumLabels; ++k) b.goal[static_cast<size_t>(r * kNumLabels + k)] = o.goal[static_cast<size_t>(k)];
    b.prev_action[static_cast<size_t>(2 * r)] = o.prev_action[0];
    b.prev_action[static_cast<size_t>(2 * r + 1)] = o.prev_action[1];
    b.collision[static_cast<size_t>(r)] = o.collision ? T(1) : T(0);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Binder

template <class T>
ad::Var Binder<T>::operator()(const std::string& name) {
  const size_t i = static_cast<size_t>(params_.index(name));
  if (!vars_[i].valid()) {
    vars_[i] = trainable_ ? tape_.parameter(params_[i].value) : tape_.constant_ref(params_[i].value);
  }
  return vars_[i];
}

template <class T>
std::vector<ad::Tensor<T>> Binder<T>::grads() const {
  std::vector<ad::Tensor<T>> out;
  out.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    out.push_back(vars_[i].valid() ? tape_.grad(vars_[i]) : ad::Tensor<T>(params_[i].value.shape()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <class T>
ad::Tensor<T> uniform_init(ad::Shape shape, int fan_in, std::mt19937_64& rng) {
  ad::Tensor<T> t(std::move(shape));
  const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-lim, lim);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
void add_dense(ParamSet<T>& ps, const std::string& name, int in, int out, std::mt19937_64& rng) {
  ps.add(name + "/w", uniform_init<T>({in, out}, in, rng));
  ps.add(name + "/b", ad::Tensor<T>({out}));
}

template <class T>
void add_mlp(ParamSet<T>& ps, const std::string& name, int in, int e, std::mt19937_64& rng) {
  add_dense(ps, name + "/fc0", in, e, rng);
  add_dense(ps, name + "/fc1", e, e, rng);
}

}  // namespace

template <class T>
void add_torso_params(ParamSet<T>& ps, const std::string& prefix, const NetConfig& cfg, std::mt19937_64& rng) {
  const int e = cfg.embed_dim, h = cfg.lstm_dim;
  int cin = 1;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string name = prefix + "lidar/conv" + std::to_string(i);
    const int cout = cfg.conv_channels[i];
    ps.add(name + "/w", uniform_init<T>({cfg.conv_kernel, cin, cout}, cfg.conv_kernel * cin, rng));
    ps.add(name + "/b", ad::Tensor<T>({cout}));
    cin = cout;
  }
  add_dense(ps, prefix + "lidar/fc", cfg.conv_output_len(), e, rng);
  add_mlp(ps, prefix + "det", cfg.det_bins, e, rng);
  add_mlp(ps, prefix + "prev_action", 2, e, rng);
  add_mlp(ps, prefix + "collision", 1, e, rng);
  add_mlp(ps, prefix + "goal", kNumLabels, e, rng);
  ps.add(prefix + "lstm/wx", uniform_init<T>({e, 4 * h}, e, rng));
  ps.add(prefix + "lstm/wh", uniform_init<T>({h, 4 * h}, h, rng));
  ps.add(prefix + "lstm/b", ad::Tensor<T>({4 * h}));
}

template <class T>
ParamSet<T> make_policy_params(const NetConfig& cfg, std::mt19937_64& rng) {
  ParamSet<T> ps;
  add_torso_params(ps, "policy/", cfg, rng);
  add_dense(ps, "policy/head/fc0", cfg.lstm_dim, cfg.head_hidden, rng);
  add_dense(ps, "policy/head/fc1", cfg.head_hidden, 2 * cfg.action_dim, rng);
  return ps;
}

template <class T>
ParamSet<T> make_critic_params(const NetConfig& cfg, std::mt19937_64& rng) {
  ParamSet<T> ps;
  for (const char* q : {"q1/", "q2/"}) {
    add_torso_params(ps, q, cfg, rng);
    add_dense(ps, std::string(q) + "head/fc0", cfg.lstm_dim + cfg.action_dim, cfg.head_hidden, rng);
    add_dense(ps, std::string(q) + "head/fc1", cfg.head_hidden, 1, rng);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Forward pieces

template <class T>
ObsVars<T> bind_obs(ad::Tape<T>& tape, const ObsBatch<T>& obs) {
  return {tape.constant_ref(obs.lidar), tape.constant_ref(obs.det), tape.constant_ref(obs.goal),
          tape.constant_ref(obs.prev_action), tape.constant_ref(obs.collision)};
}

namespace {

template <class T>
ad::Var dense_relu(Binder<T>& p, const std::string& name, ad::Var x) {
  ad::Tape<T>& t = p.tape();
  return ad::relu(t, ad::affine(t, x, p(name + "/w"), p(name + "/b")));
}

template <class T>
ad::Var mlp(Binder<T>& p, const std::string& name, ad::Var x) {
  return dense_relu(p, name + "/fc1", dense_relu(p, name + "/fc0", x));
}

template <class T>
LstmState lstm_cell(ad::Tape<T>& t, ad::Var pre, ad::Var wh, const LstmState& st, int h) {
  ad::Var gates = ad::add(t, pre, ad::matmul(t, st.h, wh));
  ad::Var i = ad::sigmoid(t, ad::slice(t, gates, 1, 0, h));
  ad::Var f = ad::sigmoid(t, ad::slice(t, gates, 1, h, 2 * h));
  ad::Var g = ad::tanh(t, ad::slice(t, gates, 1, 2 * h, 3 * h));
  ad::Var o = ad::sigmoid(t, ad::slice(t, gates, 1, 3 * h, 4 * h));
  ad::Var c = ad::add(t, ad::mul(t, f, st.c), ad::mul(t, i, g));
  return {ad::mul(t, o, ad::tanh(t, c)), c};
}

}  // namespace

template <class T>
EmbedParts embed_observation(Binder<T>& p, const std::string& prefix, const ObsVars<T>& obs,
                             const NetConfig& cfg) {
  ad::Tape<T>& t = p.tape();
  ad::Var x = obs.lidar;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string name = prefix + "lidar/conv" + std::to_string(i);
    x = ad::relu(t, ad::conv1d(t, x, p(name + "/w"), p(name + "/b"), cfg.conv_stride));
  }
  const int n = t.shape(x)[0];
  x = ad::reshape(t, x, {n, cfg.conv_output_len()});
  EmbedParts parts;
  parts.lidar = dense_relu(p, prefix + "lidar/fc", x);
  parts.det = mlp(p, prefix + "det", obs.det);
  parts.prev_action = mlp(p, prefix + "prev_action", obs.prev_action);
  parts.collision = mlp(p, prefix + "collision", obs.collision);
  parts.goal = mlp(p, prefix + "goal", obs.goal);
  parts.total = ad::add(t, ad::add(t, ad::add(t, ad::add(t, parts.lidar, parts.det), parts.prev_action),
                                   parts.collision),
                        parts.goal);
  return parts;
}

template <class T>
LstmState zero_lstm_state(ad::Tape<T>& tape, int batch, const NetConfig& cfg) {
  return {tape.constant(ad::Tensor<T>({batch, cfg.lstm_dim})), tape.constant(ad::Tensor<T>({batch, cfg.lstm_dim}))};
}

template <class T>
LstmState recurrent_step(Binder<T>& p, const std::string& prefix, ad::Var e, const LstmState& st,
                         const NetConfig& cfg) {
  ad::Tape<T>& t = p.tape();
  ad::Var pre = ad::affine(t, e, p(prefix + "lstm/wx"), p(prefix + "lstm/b"));
  return lstm_cell(t, pre, p(prefix + "lstm/wh"), st, cfg.lstm_dim);
}

template <class T>
std::pair<ad::Var, LstmState> run_torso(Binder<T>& p, const std::string& prefix, const ObsVars<T>& obs,
                                        int steps, int batch, const NetConfig& cfg, const LstmState* init) {
  ad::Tape<T>& t = p.tape();
  if (t.shape(obs.goal)[0] != steps * batch) {
    throw ShapeError("run_torso: " + std::to_string(t.shape(obs.goal)[0]) + " rows for " +
                     std::to_string(steps) + "x" + std::to_string(batch));
  }
  EmbedParts e = embed_observation(p, prefix, obs, cfg);
  ad::Var pre = ad::affine(t, e.total, p(prefix + "lstm/wx"), p(prefix + "lstm/b"));
  ad::Var wh = p(prefix + "lstm/wh");
  LstmState st = init ? *init : zero_lstm_state(t, batch, cfg);
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    ad::Var pre_s = steps == 1 ? pre : ad::slice(t, pre, 0, s * batch, (s + 1) * batch);
    st = lstm_cell(t, pre_s, wh, st, cfg.lstm_dim);
    outs.push_back(st.h);
  }
  ad::Var out = steps == 1 ? outs[0] : ad::concat(t, outs, 0);
  return {out, st};
}

template <class T>
PolicyOut policy_head(Binder<T>& p, ad::Var lstm_out, const NetConfig& cfg) {
  ad::Tape<T>& t = p.tape();
  ad::Var hid = dense_relu(p, "policy/head/fc0", lstm_out);
  ad::Var out = ad::affine(t, hid, p("policy/head/fc1/w"), p("policy/head/fc1/b"));
  const int a = cfg.action_dim;
  return {ad::slice(t, out, 1, 0, a),
          ad::clamp(t, ad::slice(t, out, 1, a, 2 * a), static_cast<T>(kLogStdMin), static_cast<T>(kLogStdMax))};
}

template <class T>
PolicySample policy_sample(ad::Tape<T>& t, const PolicyOut& out, const ad::Tensor<T>& noise) {
  if (noise.shape() != t.shape(out.mean)) {
    throw ShapeError("policy_sample: noise " + ad::shape_str(noise.shape()) + " vs mean " +
                     ad::shape_str(t.shape(out.mean)));
  }
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * kPi));
  ad::Tensor<T> base(noise.shape());
  for (size_t i = 0; i < noise.size(); ++i) base[i] = T(-0.5) * noise[i] * noise[i] - half_log_2pi;
  ad::Var n = t.constant(noise);
  ad::Var u = ad::add(t, out.mean, ad::mul(t, ad::exp(t, out.log_std), n));
  ad::Var a = ad::tanh(t, u);
  ad::Var log_n = ad::sub(t, t.constant(std::move(base)), out.log_std);
  ad::Var corr = ad::log(t, ad::scale(t, ad::square(t, a), T(-1), static_cast<T>(1.0 + kTanhEps)));
  return {a, ad::sum_cols(t, ad::sub(t, log_n, corr))};
}

template <class T>
ad::Var q_value(Binder<T>& p, const std::string& prefix, ad::Var lstm_out, ad::Var action,
                const NetConfig&) {
  ad::Tape<T>& t = p.tape();
  ad::Var hid = dense_relu(p, prefix + "head/fc0", ad::concat(t, {lstm_out, action}, 1));
  return ad::affine(t, hid, p(prefix + "head/fc1/w"), p(prefix + "head/fc1/b"));
}

// ---------------------------------------------------------------------------
// PolicyRunner

PolicyRunner::PolicyRunner(NetConfig cfg, std::shared_ptr<const ParamSet<float>> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  reset();
}

void PolicyRunner::reset() {
  h_ = ad::Tensor<float>({1, cfg_.lstm_dim});
  c_ = ad::Tensor<float>({1, cfg_.lstm_dim});
}

void PolicyRunner::set_params(std::shared_ptr<const ParamSet<float>> params) { params_ = std::move(params); }

std::array<float, 2> PolicyRunner::act(const Observation& obs, const std::array<float, 2>* noise,
                                       float* log_prob) {
  if (cfg_.action_dim != 2) throw ShapeError("PolicyRunner: action_dim must be 2");
  ad::Tape<float> tape(false);
  Binder<float> p(tape, *params_, false);
  const Observation* one[] = {&obs};
  ObsBatch<float> b = make_obs_batch<float>(one, cfg_);
  ObsVars<float> vars = bind_obs(tape, b);
  LstmState init{tape.constant_ref(h_), tape.constant_ref(c_)};
  auto [out, st] = run_torso(p, "policy/", vars, 1, 1, cfg_, &init);
  PolicyOut po = policy_head(p, out, cfg_);
  ad::Tensor<float> eps({1, 2});
  if (noise) {
    eps[0] = (*noise)[0];
    eps[1] = (*noise)[1];
  }
  PolicySample s = policy_sample(tape, po, eps);
  ad::Tensor<float> h = tape.value(st.h), c = tape.value(st.c);
  h_ = std::move(h);
  c_ = std::move(c);
  if (log_prob) *log_prob = tape.value(s.log_prob)[0];
  const auto& a = tape.value(s.action);
  return {a[0], a[1]};
}

nlohmann::json layout_manifest(const ParamSet<float>& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : params) arr.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  return arr;
}

void validate_layout(const ParamSet<float>& params, const nlohmann::json& manifest) {
  if (!manifest.is_array() || manifest.size() != params.size()) {
    throw ShapeError("layout manifest: expected " + std::to_string(params.size()) + " entries");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& m = manifest[i];
    if (m.at("name").get<std::string>() != params[i].name ||
        m.at("shape").get<ad::Shape>() != params[i].value.shape()) {
      throw ShapeError("layout manifest: entry " + std::to_string(i) + " is " + m.dump() + ", checkpoint has '" +
                       params[i].name + "' " + ad::shape_str(params[i].value.shape()));
    }
  }
}

#define OBJNAV_NETS_INSTANTIATE(T)                                                                          \
  template struct ObsBatch<T>;                                                                              \
  template class Binder<T>;                                                                                 \
  template ObsBatch<T> make_obs_batch<T>(std::span<const Observation* const>, const NetConfig&);            \
  template void add_torso_params<T>(ParamSet<T>&, const std::string&, const NetConfig&, std::mt19937_64&); \
  template ParamSet<T> make_policy_params<T>(const NetConfig&, std::mt19937_64&);                           \
  template ParamSet<T> make_critic_params<T>(const NetConfig&, std::mt19937_64&);                           \
  template ObsVars<T> bind_obs<T>(ad::Tape<T>&, const ObsBatch<T>&);                                        \
  template EmbedParts embed_observation<T>(Binder<T>&, const std::string&, const ObsVars<T>&,               \
                                           const NetConfig&);                                               \
  template LstmState zero_lstm_state<T>(ad::Tape<T>&, int, const NetConfig&);                               \
  template LstmState recurrent_step<T>(Binder<T>&, const std::string&, ad::Var, const LstmState&,           \
                                       const NetConfig&);                                                   \
  template std::pair<ad::Var, LstmState> run_torso<T>(Binder<T>&, const std::string&, const ObsVars<T>&,   \
                                                      int, int, const NetConfig&, const LstmState*);        \
  template PolicyOut policy_head<T>(Binder<T>&, ad::Var, const NetConfig&);                                 \
  template PolicySample policy_sample<T>(ad::Tape<T>&, const PolicyOut&, const ad::Tensor<T>&);             \
  template ad::Var q_value<T>(Binder<T>&, const std::string&, ad::Var, ad::Var, const NetConfig&);

OBJNAV_NETS_INSTANTIATE(float)
OBJNAV_NETS_INSTANTIATE(double)

}  // namespace objnav
