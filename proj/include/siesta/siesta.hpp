#pragma once

#include "siesta/binary_io.hpp"
#include "siesta/dataset.hpp"
#include "siesta/error.hpp"
#include "siesta/experiment/experiment.hpp"
#include "siesta/experiment/metrics.hpp"
#include "siesta/experiment/ordering.hpp"
#include "siesta/experiment/stats.hpp"
#include "siesta/head/cosine_head.hpp"
#include "siesta/io/checkpoint.hpp"
#include "siesta/io/config.hpp"
#include "siesta/io/extractor.hpp"
#include "siesta/io/features.hpp"
#include "siesta/io/idx.hpp"
#include "siesta/io/pipeline.hpp"
#include "siesta/io/results.hpp"
#include "siesta/io/synthetic.hpp"
#include "siesta/nn/network.hpp"
#include "siesta/nn/optimizer.hpp"
#include "siesta/pq/codec.hpp"
#include "siesta/pq/kmeans.hpp"
#include "siesta/random.hpp"
#include "siesta/replay/buffer.hpp"
#include "siesta/sleep/augment.hpp"
#include "siesta/sleep/consolidate.hpp"
#include "siesta/sleep/policy.hpp"
#include "siesta/sleep/train_step.hpp"
#include "siesta/tensor.hpp"
