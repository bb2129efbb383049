#pragma once

#include "statvt/common.hpp"
#include "statvt/config.hpp"
#include "statvt/dataset.hpp"
#include "statvt/gat.hpp"
#include "statvt/geo.hpp"
#include "statvt/geojson.hpp"
#include "statvt/harness.hpp"
#include "statvt/mapmatch.hpp"
#include "statvt/metrics.hpp"
#include "statvt/model.hpp"
#include "statvt/nn.hpp"
#include "statvt/roadnet.hpp"
#include "statvt/synth.hpp"
#include "statvt/tensor.hpp"
#include "statvt/transformer.hpp"
#include "statvt/ubodt.hpp"
#include "statvt/vocab.hpp"
