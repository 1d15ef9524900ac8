#pragma once

#include "scnn/tensor.hpp"
#include "scnn/conv.hpp"
#include "scnn/parallel.hpp"
#include "scnn/network.hpp"
#include "scnn/autograd.hpp"
#include "scnn/data.hpp"
#include "scnn/optimize.hpp"
#include "scnn/config.hpp"
#include "scnn/checkpoint.hpp"
#include "scnn/report.hpp"
#include "scnn/cli.hpp"
