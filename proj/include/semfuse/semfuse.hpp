#pragma once

#include "semfuse/attention.hpp"
#include "semfuse/autograd.hpp"
#include "semfuse/checkpoint.hpp"
#include "semfuse/config.hpp"
#include "semfuse/data.hpp"
#include "semfuse/error.hpp"
#include "semfuse/fusion_net.hpp"
#include "semfuse/image_io.hpp"
#include "semfuse/losses.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/ops.hpp"
#include "semfuse/optimizer.hpp"
#include "semfuse/parameters.hpp"
#include "semfuse/random.hpp"
#include "semfuse/report.hpp"
#include "semfuse/seg_net.hpp"
#include "semfuse/tensor.hpp"
#include "semfuse/training.hpp"
#include "semfuse/types.hpp"
