#include <pybind11/pybind11.h>

PYBIND11_MODULE(_msan, m) { m.doc() = "msan core bindings (placeholder)"; }
