#pragma once

#include "tdass/autodiff.hpp"
#include "tdass/bytes.hpp"
#include "tdass/checkpoint.hpp"
#include "tdass/corpus.hpp"
#include "tdass/dsp.hpp"
#include "tdass/errors.hpp"
#include "tdass/evaluation.hpp"
#include "tdass/finite_diff.hpp"
#include "tdass/gradcheck.hpp"
#include "tdass/layers.hpp"
#include "tdass/losses.hpp"
#include "tdass/model.hpp"
#include "tdass/optimizer.hpp"
#include "tdass/parameters.hpp"
#include "tdass/plot.hpp"
#include "tdass/tensor.hpp"
#include "tdass/training.hpp"
#include "tdass/utterance.hpp"
