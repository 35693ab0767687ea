#include "rifls/trace_io.hpp"

#include <istream>
#include <json.hpp>
#include <ostream>

#include "rifls/error.hpp"

namespace rifls {

using nlohmann::json;

std::string_view to_string(FactorKind k) {
  switch (k) {
    case FactorKind::Imu: return "imu";
    case FactorKind::Reprojection: return "reprojection";
    case FactorKind::MarginalPrior: return "marginal_prior";
    case FactorKind::InitialPrior: return "initial_prior";
  }
  return "?";
}

FactorKind factor_kind_from_string(std::string_view s) {
  for (FactorKind k : {FactorKind::Imu, FactorKind::Reprojection, FactorKind::MarginalPrior,
                       FactorKind::InitialPrior}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::IoError, "unknown factor kind '" + std::string(s) + "'");
}

int JacobianTrace::cols() const {
  int n = 0;
  for (const VarKey& k : columns) n += k.dim();
  return n;
}

int JacobianTrace::total_rows() const {
  int n = 0;
  for (const TraceRow& r : rows) n += r.rows();
  return n;
}

std::vector<int> JacobianTrace::column_offsets() const {
  std::vector<int> out;
  out.reserve(columns.size());
  int n = 0;
  for (const VarKey& k : columns) {
    out.push_back(n);
    n += k.dim();
  }
  return out;
}

MatX JacobianTrace::dense() const {
  std::map<VarKey, int> off;
  const std::vector<int> o = column_offsets();
  for (size_t i = 0; i < columns.size(); ++i) off[columns[i]] = o[i];
  MatX j = MatX::Zero(total_rows(), cols());
  int r0 = 0;
  for (const TraceRow& r : rows) {
    for (size_t i = 0; i < r.vars.size(); ++i) {
      j.block(r0, off.at(r.vars[i]), r.rows(), r.vars[i].dim()) = r.blocks[i];
    }
    r0 += r.rows();
  }
  return j;
}

namespace {

json to_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatX mat_from_json(const json& j, Eigen::Index cols) {
  MatX m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const json& row = j.at(i);
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::IoError, "ragged matrix in trace");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(c).get<double>();
  }
  return m;
}

json to_json(const VecX& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

VecX vec_from_json(const json& j) {
  const auto d = j.get<std::vector<double>>();
  return Eigen::Map<const VecX>(d.data(), static_cast<Eigen::Index>(d.size()));
}

json to_json(const SystemState& x) {
  const Mat3& r = x.R();
  std::vector<double> rm;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) rm.push_back(r(i, k));
  }
  return json{{"t", x.stamp},
              {"R", rm},
              {"v", to_json(VecX(x.v()))},
              {"p", to_json(VecX(x.p()))},
              {"bg", to_json(VecX(x.bias_g))},
              {"ba", to_json(VecX(x.bias_a))}};
}

SystemState state_from_json(const json& j) {
  SystemState x;
  x.stamp = j.at("t").get<double>();
  const auto rm = j.at("R").get<std::vector<double>>();
  if (rm.size() != 9) throw Error(ErrorCode::IoError, "rotation needs 9 entries");
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r(i, k) = rm[3 * i + k];
  }
  x.nav.r = lie::Rot3(r);
  x.nav.v = vec_from_json(j.at("v"));
  x.nav.p = vec_from_json(j.at("p"));
  x.bias_g = vec_from_json(j.at("bg"));
  x.bias_a = vec_from_json(j.at("ba"));
  return x;
}

json to_json(const VarKey& k) { return json{k.is_state() ? "s" : "l", k.id}; }

VarKey key_from_json(const json& j) {
  const std::string kind = j.at(0).get<std::string>();
  const std::int64_t id = j.at(1).get<std::int64_t>();
  if (kind == "s") return VarKey::state(id);
  if (kind == "l") return VarKey::landmark(id);
  throw Error(ErrorCode::IoError, "unknown variable kind '" + kind + "'");
}

json to_json(const VarValue& v) {
  if (const auto* s = std::get_if<SystemState>(&v)) return to_json(*s);
  const auto& l = std::get<InverseDepthLandmark>(v);
  return json{{"alpha", l.alpha}, {"beta", l.beta}, {"rho", l.rho}, {"anchor", l.anchor}};
}

VarValue value_from_json(const json& j, const VarKey& k) {
  if (k.is_state()) return state_from_json(j);
  InverseDepthLandmark l;
  l.alpha = j.at("alpha").get<double>();
  l.beta = j.at("beta").get<double>();
  l.rho = j.at("rho").get<double>();
  l.anchor = j.at("anchor").get<FrameId>();
  return l;
}

}  // namespace

std::string trace_to_json(const JacobianTrace& t) {
  json j;
  j["formulation"] = std::string(to_string(t.formulation));
  j["step"] = t.step;
  j["stamp"] = t.stamp;
  j["marginalizations"] = t.marginalizations;
  j["columns"] = json::array();
  for (const VarKey& k : t.columns) j["columns"].push_back(to_json(k));
  j["states"] = json::array();
  for (const StateEvalPoint& s : t.states) {
    json e{{"id", s.id}, {"latest", to_json(s.latest)}};
    if (s.first_estimate) e["first_estimate"] = to_json(*s.first_estimate);
    j["states"].push_back(std::move(e));
  }
  j["rows"] = json::array();
  for (const TraceRow& r : t.rows) {
    json e{{"factor", r.factor}, {"kind", std::string(to_string(r.kind))}, {"frozen", r.frozen}};
    e["vars"] = json::array();
    e["blocks"] = json::array();
    for (size_t i = 0; i < r.vars.size(); ++i) {
      e["vars"].push_back(to_json(r.vars[i]));
      e["blocks"].push_back(to_json(r.blocks[i]));
    }
    e["residual"] = to_json(r.residual);
    if (!r.lin_points.empty()) {
      e["lin_points"] = json::array();
      for (const VarValue& v : r.lin_points) e["lin_points"].push_back(to_json(v));
    }
    j["rows"].push_back(std::move(e));
  }
  return j.dump();
}

JacobianTrace trace_from_json(const std::string& line) {
  JacobianTrace t;
  try {
    const json j = json::parse(line);
    t.formulation = formulation_from_string(j.at("formulation").get<std::string>());
    t.step = j.at("step").get<std::int64_t>();
    t.stamp = j.at("stamp").get<double>();
    t.marginalizations = j.at("marginalizations").get<int>();
    for (const json& k : j.at("columns")) t.columns.push_back(key_from_json(k));
    for (const json& s : j.at("states")) {
      StateEvalPoint e;
      e.id = s.at("id").get<FrameId>();
      e.latest = state_from_json(s.at("latest"));
      if (s.contains("first_estimate")) e.first_estimate = state_from_json(s.at("first_estimate"));
      t.states.push_back(std::move(e));
    }
    for (const json& e : j.at("rows")) {
      TraceRow r;
      r.factor = e.at("factor").get<FactorId>();
      r.kind = factor_kind_from_string(e.at("kind").get<std::string>());
      r.frozen = e.at("frozen").get<bool>();
      r.residual = vec_from_json(e.at("residual"));
      const json& vars = e.at("vars");
      const json& blocks = e.at("blocks");
      if (vars.size() != blocks.size()) throw Error(ErrorCode::IoError, "vars/blocks mismatch");
      for (size_t i = 0; i < vars.size(); ++i) {
        r.vars.push_back(key_from_json(vars[i]));
        r.blocks.push_back(mat_from_json(blocks[i], r.vars.back().dim()));
        if (r.blocks.back().rows() != r.residual.size()) {
          throw Error(ErrorCode::IoError, "block height does not match residual");
        }
      }
      if (e.contains("lin_points")) {
        const json& lp = e.at("lin_points");
        if (lp.size() != r.vars.size()) throw Error(ErrorCode::IoError, "lin_points mismatch");
        for (size_t i = 0; i < lp.size(); ++i) r.lin_points.push_back(value_from_json(lp[i], r.vars[i]));
      }
      t.rows.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("malformed trace record: ") + e.what());
  }
  return t;
}

void write_traces(std::ostream& os, const std::vector<JacobianTrace>& traces) {
  for (const JacobianTrace& t : traces) os << trace_to_json(t) << '\n';
  if (!os) throw Error(ErrorCode::IoError, "failed writing trace");
}

std::vector<JacobianTrace> read_traces(std::istream& is) {
  std::vector<JacobianTrace> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(trace_from_json(line));
  }
  return out;
}

std::string step_to_json(const StepOutput& s) {
  json j;
  j["frame"] = s.frame;
  j["stamp"] = s.stamp;
  j["estimate"] = to_json(s.estimate);
  j["cov_diag"] = to_json(VecX(s.nav_cov.diagonal()));
  j["cost"] = s.cost_history.empty() ? 0.0 : s.cost_history.back();
  j["iterations"] = s.iterations;
  j["lambda_escalations"] = s.lambda_escalations;
  j["aborted"] = s.aborted;
  j["landmarks"] = s.lm_count;
  j["dropped_factors"] = s.dropped_factors;
  j["marginalizations"] = s.marginalizations;
  return j.dump();
}

}  // namespace rifls
