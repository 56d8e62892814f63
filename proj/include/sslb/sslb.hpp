#pragma once

#include "sslb/augment.hpp"
#include "sslb/data.hpp"
#include "sslb/errors.hpp"
#include "sslb/experiment.hpp"
#include "sslb/gradcheck.hpp"
#include "sslb/image_io.hpp"
#include "sslb/mixmatch.hpp"
#include "sslb/model.hpp"
#include "sslb/ops.hpp"
#include "sslb/optimizer.hpp"
#include "sslb/pbc.hpp"
#include "sslb/report.hpp"
#include "sslb/rng.hpp"
#include "sslb/stats.hpp"
#include "sslb/tensor.hpp"
