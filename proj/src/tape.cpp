#include "gdd/tape.hpp"

namespace gdd {

thread_local Tape* Tape::current_ = nullptr;

}  // namespace gdd
