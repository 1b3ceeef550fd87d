#pragma once

#include "advseg/adam.hpp"
#include "advseg/adversary.hpp"
#include "advseg/core.hpp"
#include "advseg/despeckle.hpp"
#include "advseg/nn.hpp"
#include "advseg/params.hpp"
#include "advseg/phantom.hpp"
#include "advseg/pipeline.hpp"
#include "advseg/rng.hpp"
#include "advseg/segnet.hpp"
#include "advseg/surfmetrics.hpp"
#include "advseg/trainer.hpp"
#include "advseg/volume.hpp"
