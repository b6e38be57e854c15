#pragma once

#include "hardspot/batching.hpp"
#include "hardspot/bounds.hpp"
#include "hardspot/environments.hpp"
#include "hardspot/expression.hpp"
#include "hardspot/external_backend.hpp"
#include "hardspot/harness.hpp"
#include "hardspot/optimizer.hpp"
#include "hardspot/oracle.hpp"
#include "hardspot/rng.hpp"
#include "hardspot/search_space.hpp"
#include "hardspot/surrogate.hpp"
#include "hardspot/trace.hpp"
#include "hardspot/verify.hpp"
