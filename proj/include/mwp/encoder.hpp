#pragma once

#include "mwp/encoder/checkpoint.hpp"
#include "mwp/encoder/config.hpp"
#include "mwp/encoder/heads.hpp"
#include "mwp/encoder/model.hpp"
#include "mwp/encoder/ops.hpp"
#include "mwp/encoder/params.hpp"
