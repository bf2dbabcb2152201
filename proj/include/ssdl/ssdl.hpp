#pragma once

#include "ssdl/adapter.hpp"
#include "ssdl/cluster.hpp"
#include "ssdl/core.hpp"
#include "ssdl/evalkit.hpp"
#include "ssdl/io.hpp"
#include "ssdl/manifest.hpp"
#include "ssdl/pipeline.hpp"
#include "ssdl/synth.hpp"
#include "ssdl/triplets.hpp"
