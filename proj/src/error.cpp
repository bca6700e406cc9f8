#include "crowdcount/error.hpp"

namespace crowdcount {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Argument: return "argument_error";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Load: return "load_error";
    case ErrorCode::Validation: return "validation_error";
    case ErrorCode::Generation: return "generation_error";
    case ErrorCode::Sampling: return "sampling_error";
    case ErrorCode::Inference: return "inference_error";
    case ErrorCode::Training: return "training_error";
    case ErrorCode::Config: return "config_error";
    case ErrorCode::Internal: return "internal_error";
  }
  return "unknown_error";
}

}  // namespace crowdcount
