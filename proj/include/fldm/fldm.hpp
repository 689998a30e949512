#ifndef FLDM_FLDM_HPP
#define FLDM_FLDM_HPP

#include "fldm/checkpoint.hpp"
#include "fldm/config.hpp"
#include "fldm/data.hpp"
#include "fldm/error.hpp"
#include "fldm/fmamba.hpp"
#include "fldm/grad_check.hpp"
#include "fldm/model.hpp"
#include "fldm/model_io.hpp"
#include "fldm/ops.hpp"
#include "fldm/smoothing.hpp"
#include "fldm/spectral.hpp"
#include "fldm/ssm.hpp"
#include "fldm/tensor.hpp"
#include "fldm/train.hpp"

#endif  // FLDM_FLDM_HPP
