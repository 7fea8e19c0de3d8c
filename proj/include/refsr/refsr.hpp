#ifndef REFSR_REFSR_HPP_
#define REFSR_REFSR_HPP_

#include "refsr/error.hpp"
#include "refsr/parallel.hpp"
#include "refsr/seed.hpp"
#include "refsr/image.hpp"
#include "refsr/image_io.hpp"
#include "refsr/features.hpp"
#include "refsr/homography.hpp"
#include "refsr/retrieval.hpp"
#include "refsr/network.hpp"
#include "refsr/training.hpp"
#include "refsr/match_fuse.hpp"
#include "refsr/metrics.hpp"
#include "refsr/pipeline.hpp"

#endif  // REFSR_REFSR_HPP_
