#include "landseg/distill.hpp"

namespace landseg {

namespace {

void collect_all(EncoderNet& net, std::vector<nn::ParamRef>& params, std::vector<nn::BufferRef>& buffers) {
  net.collect("", params, buffers);
}

}  // namespace

ParamSet snapshot_state(EncoderNet& net) {
  std::vector<nn::ParamRef> params;
  std::vector<nn::BufferRef> buffers;
  collect_all(net, params, buffers);
  ParamSet out;
  for (const auto& p : params) out[p.key] = *p.value;
  for (const auto& b : buffers) out[b.key] = *b.value;
  return out;
}

void load_state(EncoderNet& net, const ParamSet& state) {
  std::vector<nn::ParamRef> params;
  std::vector<nn::BufferRef> buffers;
  collect_all(net, params, buffers);
  auto assign = [&](const std::string& key, Tensor* dst) {
    const auto it = state.find(key);
    check(it != state.end(), "load_state: missing tensor " + key);
    check(it->second.shape() == dst->shape(), "load_state: shape mismatch for " + key);
    *dst = it->second;
  };
  for (const auto& p : params) assign(p.key, p.value);
  for (const auto& b : buffers) assign(b.key, b.value);
}

void ema_update(ParamSet& teacher, const ParamSet& student, double lambda) {
  check(lambda >= 0.0 && lambda <= 1.0, "ema_update: lambda must be in [0,1]");
  check(teacher.size() == student.size(), "ema_update: key sets differ");
  auto ti = teacher.begin();
  auto si = student.begin();
  for (; ti != teacher.end(); ++ti, ++si) {
    check(ti->first == si->first, "ema_update: key mismatch at " + ti->first);
    check(ti->second.shape() == si->second.shape(), "ema_update: shape mismatch at " + ti->first);
    double* t = ti->second.data();
    const double* s = si->second.data();
    for (std::size_t i = 0; i < ti->second.size(); ++i) t[i] = lambda * t[i] + (1.0 - lambda) * s[i];
  }
}

TeacherStudent::TeacherStudent(const EncoderConfig& config, double lambda, std::uint64_t seed)
    : lambda_(lambda), student_(config, seed), teacher_(config, seed ^ 0x9e3779b97f4a7c15ULL) {
  check(lambda >= 0.0 && lambda <= 1.0, "TeacherStudent: lambda must be in [0,1]");
  // Teacher starts as an exact copy of the student.
  load_state(teacher_, snapshot_state(student_));
}

void TeacherStudent::ema_update() {
  std::vector<nn::ParamRef> sp, tp;
  std::vector<nn::BufferRef> sb, tb;
  student_.collect("", sp, sb);
  teacher_.collect("", tp, tb);
  check(sp.size() == tp.size() && sb.size() == tb.size(), "ema_update: structure mismatch");
  auto blend = [&](Tensor& t, const Tensor& s) {
    check(t.shape() == s.shape(), "ema_update: shape mismatch");
    double* td = t.data();
    const double* sd = s.data();
    for (std::size_t i = 0; i < t.size(); ++i) td[i] = lambda_ * td[i] + (1.0 - lambda_) * sd[i];
  };
  for (std::size_t i = 0; i < sp.size(); ++i) {
    check(sp[i].key == tp[i].key, "ema_update: key mismatch at " + sp[i].key);
    blend(*tp[i].value, *sp[i].value);
  }
  for (std::size_t i = 0; i < sb.size(); ++i) {
    check(sb[i].key == tb[i].key, "ema_update: key mismatch at " + sb[i].key);
    blend(*tb[i].value, *sb[i].value);
  }
}

void TeacherStudent::collect(std::vector<nn::ParamRef>& student_params,
                             std::vector<nn::BufferRef>& student_buffers) {
  student_.collect("", student_params, student_buffers);
}

TeacherStudent init_pair(const EncoderConfig& config, double lambda, std::uint64_t seed) {
  return TeacherStudent(config, lambda, seed);
}

}  // namespace landseg
