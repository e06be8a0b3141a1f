#include "pcdnet/rng.hpp"

#include <sstream>

#include "pcdnet/errors.hpp"

namespace pcdnet {

std::string Rng::state() const {
  std::ostringstream ss;
  ss << engine_;
  return ss.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream ss(s);
  ss >> engine_;
  if (ss.fail()) throw IoError("Rng::set_state: malformed engine state");
}

}  // namespace pcdnet
