#ifndef NAKRING_NAKRING_HPP
#define NAKRING_NAKRING_HPP

#include "errors.hpp"
#include "multi_index.hpp"
#include "theta.hpp"
#include "avgeom.hpp"
#include "expr.hpp"
#include "diffop.hpp"
#include "linalg.hpp"
#include "bamodule.hpp"
#include "nakayashiki.hpp"
#include "serialize.hpp"
#include "harness.hpp"

#endif
