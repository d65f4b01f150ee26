#pragma once

// E_theta(s, a, G): a scalar MLP over the concatenation [s; a; G].

#include <istream>
#include <ostream>
#include <string>

#include "irvs/ndmath.hpp"

namespace irvs {

struct EnergyModel {
  MlpParams net;
  int state_dim = 0;
  int action_dim = 0;
  Vector action_lo;  // normalized action box, usually [-1, 1]^action_dim
  Vector action_hi;
  double return_lo = -1.0;
  double return_hi = 1.0;

  int input_dim() const { return state_dim + action_dim + 1; }
  int point_dim() const { return action_dim + 1; }

  void validate() const {
    check_chain(net);
    if (net.input_dim() != input_dim()) {
      throw ShapeError("energy net input dim " + std::to_string(net.input_dim()) + " != state+action+1 = " +
                       std::to_string(input_dim()));
    }
    if (net.output_dim() != 1) throw ShapeError("energy net must have a scalar output");
    if (action_lo.size() != action_dim || action_hi.size() != action_dim) {
      throw ShapeError("action bounds must have action_dim entries");
    }
    for (int i = 0; i < action_dim; ++i) {
      if (!std::isfinite(action_lo[i]) || !std::isfinite(action_hi[i]) || !(action_lo[i] < action_hi[i])) {
        throw ArgumentError("action bounds must be finite with min < max");
      }
    }
    if (!(return_lo < return_hi)) throw ArgumentError("return bounds must satisfy min < max");
  }
};

inline EnergyModel make_energy_model(int state_dim, int action_dim, int width, int depth, bool spectral_norm,
                                     Rng& rng) {
  EnergyModel m;
  m.state_dim = state_dim;
  m.action_dim = action_dim;
  m.action_lo = Vector::Constant(action_dim, -1.0);
  m.action_hi = Vector::Constant(action_dim, 1.0);
  auto sizes = mlp_sizes(m.input_dim(), width, depth, 1);
  m.net = make_mlp(std::span<const int>(sizes), rng, spectral_norm);
  return m;
}

// Rows [s_n; p_n] where p = (a, G). A single state row is broadcast.
inline Matrix energy_inputs(const Matrix& states, const Matrix& points) {
  if (states.rows() != points.rows() && states.rows() != 1) {
    throw ShapeError("states must have one row or one row per point");
  }
  Matrix x(points.rows(), states.cols() + points.cols());
  if (states.rows() == 1) {
    x.leftCols(states.cols()).rowwise() = states.row(0);
  } else {
    x.leftCols(states.cols()) = states;
  }
  x.rightCols(points.cols()) = points;
  return x;
}

inline Vector energy_batch(const EnergyModel& m, const Matrix& inputs) {
  if (inputs.cols() != m.input_dim()) throw ShapeError("energy input has wrong width");
  return forward_batch(m.net, inputs).col(0);
}

inline double energy(const EnergyModel& m, const Vector& s, const Vector& a, double G) {
  if (s.size() != m.state_dim) throw ShapeError("state dim mismatch");
  if (a.size() != m.action_dim) throw ShapeError("action dim mismatch");
  Vector x(m.input_dim());
  x << s, a, G;
  return mlp_forward(m.net, x);
}

inline void write_energy_model(std::ostream& os, const EnergyModel& m) {
  auto prec = os.precision(17);
  os << "# irvs-energy v1\n";
  os << "dims " << m.state_dim << ' ' << m.action_dim << '\n';
  os << "action_lo";
  for (int i = 0; i < m.action_dim; ++i) os << ' ' << m.action_lo[i];
  os << "\naction_hi";
  for (int i = 0; i < m.action_dim; ++i) os << ' ' << m.action_hi[i];
  os << "\nreturn " << m.return_lo << ' ' << m.return_hi << '\n';
  os.precision(prec);
  write_checkpoint(os, m.net, "energy");
}

inline EnergyModel read_energy_model(std::istream& is) {
  EnergyModel m;
  std::string line, tag;
  auto next = [&](const char* what) {
    if (!std::getline(is, line)) throw FormatError(std::string("energy model: missing ") + what);
    return std::istringstream(line);
  };
  if (!std::getline(is, line) || line != "# irvs-energy v1") throw FormatError("line 1: not an irvs-energy file");
  {
    auto ss = next("dims");
    if (!(ss >> tag >> m.state_dim >> m.action_dim) || tag != "dims") throw FormatError("line 2: bad dims");
  }
  auto read_vec = [&](const char* name, Vector& v, int line_no) {
    auto ss = next(name);
    v.resize(m.action_dim);
    if (!(ss >> tag) || tag != name) throw FormatError("line " + std::to_string(line_no) + ": expected " + name);
    for (int i = 0; i < m.action_dim; ++i) {
      if (!(ss >> v[i])) throw FormatError("line " + std::to_string(line_no) + ": short " + name);
    }
  };
  read_vec("action_lo", m.action_lo, 3);
  read_vec("action_hi", m.action_hi, 4);
  {
    auto ss = next("return");
    if (!(ss >> tag >> m.return_lo >> m.return_hi) || tag != "return") throw FormatError("line 5: bad return bounds");
  }
  m.net = read_checkpoint(is);
  m.validate();
  return m;
}

}  // namespace irvs
