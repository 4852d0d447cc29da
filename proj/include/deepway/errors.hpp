#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepway {

// Every failure raised by the library derives from deepway::error so callers
// can catch the family at once; the subclasses name the contract that broke.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct bounds_error : error { using error::error; };
struct argument_error : error { using error::error; };
struct shape_error : error { using error::error; };
struct config_error : error { using error::error; };
struct format_error : error { using error::error; };
struct integrity_error : format_error { using format_error::format_error; };
struct storage_error : error { using error::error; };
struct geometry_error : error { using error::error; };
struct no_content_error : error { using error::error; };
struct unreachable_error : error { using error::error; };
struct undefined_metric_error : error { using error::error; };
struct infeasible_params_error : error { using error::error; };
struct ordering_error : error { using error::error; };
struct alignment_error : error { using error::error; };
struct training_error : error { using error::error; };

// A route leg had no path; the legs before it were planned successfully.
struct partial_plan_error : unreachable_error {
  partial_plan_error(const std::string& what, std::size_t completed) : unreachable_error(what), completed_legs(completed) {}
  std::size_t completed_legs;
};

}  // namespace deepway
