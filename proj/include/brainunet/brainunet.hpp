#pragma once

#include "brainunet/augment.hpp"
#include "brainunet/checkpoint.hpp"
#include "brainunet/components.hpp"
#include "brainunet/edt.hpp"
#include "brainunet/error.hpp"
#include "brainunet/inference.hpp"
#include "brainunet/loss.hpp"
#include "brainunet/manifest.hpp"
#include "brainunet/metrics.hpp"
#include "brainunet/model.hpp"
#include "brainunet/nifti.hpp"
#include "brainunet/optim.hpp"
#include "brainunet/phantom.hpp"
#include "brainunet/preprocess.hpp"
#include "brainunet/stats.hpp"
#include "brainunet/tensor.hpp"
#include "brainunet/train.hpp"
#include "brainunet/volume.hpp"
