#pragma once

#include "aggro/models/autodiff.hpp"
#include "aggro/models/autoencoder.hpp"
#include "aggro/models/classifier.hpp"
#include "aggro/models/layers.hpp"
#include "aggro/models/recurrent.hpp"
#include "aggro/models/safetensors.hpp"
#include "aggro/models/skipgram.hpp"
#include "aggro/models/spec.hpp"
#include "aggro/models/training.hpp"
#include "aggro/models/transformer.hpp"
