#include "rerand/balance.hpp"

namespace rerand {

template class BalanceProblem<double>;

}  // namespace rerand
