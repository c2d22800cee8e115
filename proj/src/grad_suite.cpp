#include "depthcontrast/grad_suite.hpp"

#include <cstdio>
#include <sstream>

#include "depthcontrast/contrastive.hpp"

namespace dc {

GradSuiteConfig GradSuiteConfig::tiny() {
  GradSuiteConfig c;
  c.model.encoder.stages = {{4, 3, 2}, {8, 3, 2}};
  c.model.encoder.embedding_dim = 8;
  c.model.projector = ProjectionHeadConfig::scaled(1.0 / 64.0);
  c.model.classifier.hidden = 16;
  return c;
}

namespace {

Tensor<double> normal_images(Index n, Index channels, Index size, Stream& s) {
  Tensor<double> t({n, channels, size, size});
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t[i] = unit(s);
  return t;
}

using Predicate = std::function<bool(const std::string&)>;

GradCheckReport check_path(const ModelParams<double>& model, const Predicate& include, const GradSuiteConfig& cfg,
                           std::optional<Primitive> corrupt,
                           const std::function<Var<double>(BoundParams<double>&)>& loss_of) {
  NamedTensors<double> params;
  for (const auto& e : model.entries())
    if (e.kind == ParamKind::weight && include(e.name)) params.emplace_back(e.name, e.value);
  LossBuilder<double> fn = [&](Tape<double>& tape, std::span<const Var<double>> vars) {
    if (corrupt) tape.inject_gradient_fault(*corrupt, 1.5);
    ModelParams<double> scratch = model;  // running statistics are updated per call
    BoundParams<double> bound(tape, scratch, [](const std::string&) { return false; });
    for (std::size_t i = 0; i < params.size(); ++i) bound.bind(params[i].first, vars[i]);
    return loss_of(bound);
  };
  return grad_check(fn, params, cfg.eps, cfg.tol, cfg.floor);
}

}  // namespace

GradSuiteReport run_grad_suite(const GradSuiteConfig& cfg, std::uint64_t seed, std::optional<Primitive> corrupt) {
  const ModelParams<double> model = init_params<double>(cfg.model, seed);
  Stream data = derive_stream(seed, {0x6c, 1});
  const Index channels = cfg.model.encoder.input_channels;
  const Tensor<double> views = normal_images(2 * cfg.pairs, channels, cfg.image_size, data);
  const Tensor<double> images = normal_images(cfg.pairs, 3, cfg.image_size, data);
  Tensor<double> onehot({cfg.pairs, Index(cfg.model.classifier.num_classes)});
  for (Index i = 0; i < cfg.pairs; ++i) onehot.matrix()(i, i % cfg.model.classifier.num_classes) = 1.0;

  GradSuiteReport report;
  report.contrastive = check_path(
      model, [](const std::string& n) { return is_encoder_param(n) || is_projector_param(n); }, cfg, corrupt,
      [&](BoundParams<double>& b) {
        Var<double> h = encoder_forward(b, b.tape().leaf(views), true);
        return nt_xent_loss(projector_forward(b, h, true), ContrastiveConfig{cfg.tau}).loss;
      });
  report.classification = check_path(
      model, [](const std::string& n) { return is_encoder_param(n) || is_classifier_param(n); }, cfg, corrupt,
      [&](BoundParams<double>& b) {
        Stream drop = derive_stream(seed, {0x6c, 2});
        Var<double> h = encoder_forward(b, b.tape().leaf(images), true);
        Var<double> logits = classifier_forward(b, h, true, &drop);
        return scale(reduce_sum(log_softmax(logits) * b.tape().leaf(onehot)), -1.0 / double(cfg.pairs));
      });
  return report;
}

std::string format_grad_suite(const GradSuiteReport& report) {
  std::ostringstream out;
  out << "path\tparameter\tmax_rel_error\tmean_rel_error\tchecked\tskipped\tverdict\n";
  char buf[64];
  for (const auto& [path, r] : {std::pair<const char*, const GradCheckReport*>{"contrastive", &report.contrastive},
                                {"classification", &report.classification}})
    for (const auto& p : r->params) {
      std::snprintf(buf, sizeof buf, "%.3e\t%.3e", p.max_rel_error, p.mean_rel_error);
      out << path << '\t' << p.name << '\t' << buf << '\t' << p.checked << '\t' << p.skipped << '\t'
          << (p.passed ? "ok" : "FAIL") << '\n';
    }
  return out.str();
}

}  // namespace dc
