#pragma once

// Semi-supervised topic modeling with optimal-transport topic alignment
// and similarity-based knowledge distillation, trained from a handful of
// labeled seed documents and embeddings learned on the corpus itself.

#include "kdstm/bessel.hpp"
#include "kdstm/checkpoint.hpp"
#include "kdstm/common.hpp"
#include "kdstm/config.hpp"
#include "kdstm/corpus.hpp"
#include "kdstm/embedding.hpp"
#include "kdstm/evalbench.hpp"
#include "kdstm/model.hpp"
#include "kdstm/optim.hpp"
#include "kdstm/sinkhorn.hpp"
#include "kdstm/stopwords.hpp"
#include "kdstm/trainer.hpp"
#include "kdstm/vmf.hpp"
