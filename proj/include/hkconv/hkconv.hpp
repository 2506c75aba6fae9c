#pragma once

#include "hkconv/core.hpp"
#include "hkconv/manifold.hpp"
#include "hkconv/params.hpp"
#include "hkconv/optim.hpp"
#include "hkconv/kernelgen.hpp"
#include "hkconv/layers.hpp"
#include "hkconv/autograd.hpp"
#include "hkconv/io.hpp"
#include "hkconv/graph.hpp"
#include "hkconv/model.hpp"
#include "hkconv/train.hpp"
#include "hkconv/invariants.hpp"
