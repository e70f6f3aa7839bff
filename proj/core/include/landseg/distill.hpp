#pragma once

#include <map>
#include <string>

#include "landseg/encoder.hpp"

namespace landseg {

/// Keyed snapshot of every state tensor in a network (learnable parameters
/// plus running statistics). Keys are stable across runs.
using ParamSet = std::map<std::string, Tensor>;

ParamSet snapshot_state(EncoderNet& net);
void load_state(EncoderNet& net, const ParamSet& state);

/// Elementwise EMA: every teacher tensor becomes
/// lambda * teacher + (1 - lambda) * student. Throws on key or shape
/// mismatch. The student is never touched.
void ema_update(ParamSet& teacher, const ParamSet& student, double lambda);

/// Teacher-student pair: identical architectures, independent parameters.
/// The student learns by gradient descent; the teacher only ever changes
/// through ema_update and never receives gradients.
class TeacherStudent {
 public:
  TeacherStudent(const EncoderConfig& config, double lambda, std::uint64_t seed);

  EncoderNet& student() { return student_; }
  EncoderNet& teacher() { return teacher_; }
  double lambda() const { return lambda_; }

  /// theta_t <- lambda * theta_t + (1 - lambda) * theta_s, every tensor.
  void ema_update();

  void collect(std::vector<nn::ParamRef>& student_params, std::vector<nn::BufferRef>& student_buffers);

 private:
  double lambda_;
  EncoderNet student_;
  EncoderNet teacher_;
};

/// First half of the pair construction: a freshly initialized student and a
/// teacher that starts as its exact copy.
TeacherStudent init_pair(const EncoderConfig& config, double lambda, std::uint64_t seed);

}  // namespace landseg
