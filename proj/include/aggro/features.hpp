#pragma once

#include "aggro/features/batch.hpp"
#include "aggro/features/subword.hpp"
#include "aggro/features/word_index.hpp"
