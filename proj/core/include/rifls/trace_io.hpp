#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rifls/smoother.hpp"
#include "rifls/trace.hpp"

namespace rifls {

// Line-delimited JSON. Doubles are written with enough digits to reload
// bitwise.
std::string trace_to_json(const JacobianTrace& t);
JacobianTrace trace_from_json(const std::string& line);

void write_traces(std::ostream& os, const std::vector<JacobianTrace>& traces);
std::vector<JacobianTrace> read_traces(std::istream& is);

// One record per frame: stamp, estimate, covariance diagonal, final cost,
// iteration counts and the number of marginalizations so far.
std::string step_to_json(const StepOutput& s);

}  // namespace rifls
