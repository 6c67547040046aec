#pragma once

#include "kplsvm/errors.hpp"
#include "kplsvm/loss.hpp"
#include "kplsvm/kernel.hpp"
#include "kplsvm/qp.hpp"
#include "kplsvm/data.hpp"
#include "kplsvm/trainer.hpp"
#include "kplsvm/modelsel.hpp"
#include "kplsvm/model_io.hpp"
